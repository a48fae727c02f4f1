#ifndef VINET_C_H
#define VINET_C_H

/* C API of the vinet shared library. All functions return a status code;
 * vinet_last_error() gives a thread-local detail message for the last
 * failure on the calling thread. Opaque handles are created and destroyed
 * by the library. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum vinet_status {
  VINET_OK = 0,
  VINET_ERR_INVALID_ARGUMENT = 1,
  VINET_ERR_FILE = 2,
  VINET_ERR_FORMAT = 3,
  VINET_ERR_NUMERIC = 4,
  VINET_ERR_DEGENERATE = 5,
  VINET_ERR_INTERNAL = 6
} vinet_status;

const char* vinet_version(void);
const char* vinet_status_name(vinet_status status);
const char* vinet_last_error(void);

/* ---- geometry ------------------------------------------------------- */

/* Split a row-major rotation matrix into its viewpoint and in-plane
 * factors; phi/theta are the azimuth/inclination of the zenith column. */
vinet_status vinet_decompose_rotation(const double matrix[9], double r_vp[9],
                                      double r_ip[9], double* phi,
                                      double* theta);

/* ---- spherical padding ---------------------------------------------- */

/* Flat source index (into height*width) for every cell of the padded
 * (height+2*pad) x (width+2*pad) grid, row-major. `out` must hold
 * (height+2*pad)*(width+2*pad) entries. */
vinet_status vinet_pad_index_map(uint32_t height, uint32_t width, uint32_t pad,
                                 int32_t* out);

/* ---- data ------------------------------------------------------------ */

/* Write `count` synthetic samples (VIPC files plus manifest.txt) into
 * out_dir, seeded deterministically. */
vinet_status vinet_generate_dataset(uint64_t seed, uint32_t count,
                                    const char* out_dir);

/* Convert one attribute stream of a VIPC point cloud into a VISM
 * spherical map of the given resolution. */
vinet_status vinet_convert_cloud(const char* vipc_path, const char* vism_path,
                                 uint32_t height, uint32_t width,
                                 const char* stream);

/* ---- training --------------------------------------------------------- */

typedef struct vinet_train_config vinet_train_config; /* opaque */

vinet_status vinet_train_config_create(vinet_train_config** out);
vinet_status vinet_train_config_load(vinet_train_config* cfg, const char* path);
vinet_status vinet_train_config_set(vinet_train_config* cfg, const char* key,
                                    const char* value);
void vinet_train_config_destroy(vinet_train_config* cfg);

typedef struct vinet_metrics {
  double mean_deg;
  double median_deg;
  double acc5, acc10, acc15;
  double phi_top1, theta_top1;
  double phi_within1, theta_within1;
  uint64_t count;
} vinet_metrics;

typedef void (*vinet_progress_fn)(int iter, int total, double loss,
                                  double loss_vp, double loss_ip, double lr,
                                  double median_deg, void* user);

/* Train on the dataset directory; eval_dir may be NULL (no held-out
 * evaluation), log_csv may be NULL (no log), progress may be NULL. */
vinet_status vinet_train_run(const vinet_train_config* cfg, const char* data_dir,
                             const char* eval_dir, const char* checkpoint_path,
                             const char* log_csv, uint32_t threads,
                             vinet_progress_fn progress, void* user,
                             vinet_metrics* final_metrics);

vinet_status vinet_evaluate(const char* checkpoint_path, const char* data_dir,
                            uint32_t threads, vinet_metrics* out);

/* ---- verification ----------------------------------------------------- */

vinet_status vinet_gradcheck_count(uint32_t* count);
vinet_status vinet_gradcheck_name(uint32_t index, char* buf, size_t buflen);
/* worst normalized gradient error for one registered op; pass = error < 1e-5 */
vinet_status vinet_gradcheck_run(const char* name, double* worst_error,
                                 int* pass);

typedef struct vinet_equivariance_report {
  double max_shift_error;
  uint32_t resolutions[3];
  double discrepancy[3];
} vinet_equivariance_report;

vinet_status vinet_check_equivariance(uint32_t trials, uint32_t resolution,
                                      uint64_t seed,
                                      vinet_equivariance_report* out);

#ifdef __cplusplus
}
#endif

#endif /* VINET_C_H */

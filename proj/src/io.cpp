#include "vinet/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vinet/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "file readers/writers assume a little-endian host");

namespace vinet {

namespace {

class BinWriter {
 public:
  explicit BinWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw FileError("cannot open '" + path + "' for writing");
  }
  void bytes(const void* p, size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  template <typename T>
  void scalar(T v) {
    bytes(&v, sizeof(T));
  }
  void magic(const char m[4]) { bytes(m, 4); }
  void close() {
    out_.close();
    if (!out_) throw FileError("error while writing '" + path_ + "'");
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class BinReader {
 public:
  explicit BinReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw FileError("cannot open '" + path + "' for reading");
  }
  void bytes(void* p, size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in_.gcount()) != n) {
      throw FormatError("'" + path_ + "' is truncated");
    }
  }
  template <typename T>
  T scalar() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  void expect_magic(const char m[4]) {
    char got[4];
    bytes(got, 4);
    if (std::memcmp(got, m, 4) != 0) {
      throw FormatError("'" + path_ + "' has wrong magic (expected " +
                        std::string(m, 4) + ")");
    }
  }
  void expect_version(std::uint32_t want) {
    const auto got = scalar<std::uint32_t>();
    if (got != want) {
      std::ostringstream os;
      os << "'" << path_ << "' has unsupported version " << got;
      throw FormatError(os.str());
    }
  }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
};

void write_f32_array(BinWriter& w, const double* src, size_t n) {
  std::vector<float> buf(n);
  for (size_t i = 0; i < n; ++i) buf[i] = static_cast<float>(src[i]);
  w.bytes(buf.data(), n * sizeof(float));
}

void read_f32_array(BinReader& r, double* dst, size_t n) {
  std::vector<float> buf(n);
  r.bytes(buf.data(), n * sizeof(float));
  for (size_t i = 0; i < n; ++i) dst[i] = static_cast<double>(buf[i]);
}

}  // namespace

void write_vipc(const std::string& path, const PointCloud& cloud) {
  BinWriter w(path);
  w.magic("VIPC");
  w.scalar<std::uint32_t>(1);
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(cloud.size()));
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(cloud.streams.size()));
  for (const auto& s : cloud.streams) {
    if (s.name.size() > 255) throw std::invalid_argument("stream name too long");
    w.scalar<std::uint8_t>(static_cast<std::uint8_t>(s.name.size()));
    w.bytes(s.name.data(), s.name.size());
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(s.channels));
  }
  write_f32_array(w, cloud.points.data(), static_cast<size_t>(cloud.size()) * 3);
  for (const auto& s : cloud.streams) {
    write_f32_array(w, s.values.data(), s.values.size());
  }
  w.close();
}

PointCloud read_vipc(const std::string& path) {
  BinReader r(path);
  r.expect_magic("VIPC");
  r.expect_version(1);
  const auto n = r.scalar<std::uint32_t>();
  const auto stream_count = r.scalar<std::uint32_t>();
  if (n == 0) throw FormatError("'" + path + "' holds an empty point cloud");

  PointCloud cloud;
  cloud.streams.resize(stream_count);
  for (auto& s : cloud.streams) {
    const auto name_len = r.scalar<std::uint8_t>();
    s.name.resize(name_len);
    r.bytes(s.name.data(), name_len);
    const auto channels = r.scalar<std::uint32_t>();
    if (channels == 0 || channels > 1024) {
      throw FormatError("'" + path + "' has an implausible channel count");
    }
    s.channels = static_cast<int>(channels);
  }
  cloud.points.resize(n, 3);
  read_f32_array(r, cloud.points.data(), static_cast<size_t>(n) * 3);
  for (auto& s : cloud.streams) {
    s.values.resize(static_cast<size_t>(n) * s.channels);
    read_f32_array(r, s.values.data(), s.values.size());
  }
  return cloud;
}

void write_vism(const std::string& path, const SphericalMap& map) {
  BinWriter w(path);
  w.magic("VISM");
  w.scalar<std::uint32_t>(1);
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(map.channels));
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(map.height));
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(map.width));
  write_f32_array(w, map.data.data(), map.data.size());
  w.close();
}

SphericalMap read_vism(const std::string& path) {
  BinReader r(path);
  r.expect_magic("VISM");
  r.expect_version(1);
  const auto c = r.scalar<std::uint32_t>();
  const auto h = r.scalar<std::uint32_t>();
  const auto w = r.scalar<std::uint32_t>();
  if (c == 0 || h < 2 || w < 2 || w % 2 != 0 || c > 65536 || h > 65536 || w > 65536) {
    throw FormatError("'" + path + "' has invalid map dimensions");
  }
  SphericalMap map(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
  read_f32_array(r, map.data.data(), map.data.size());
  return map;
}

void write_checkpoint(const std::string& path,
                      const std::vector<CheckpointEntry>& entries) {
  BinWriter w(path);
  w.magic("VICK");
  w.scalar<std::uint32_t>(1);
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 65535) throw std::invalid_argument("parameter name too long");
    if (e.dims.empty() || e.dims.size() > 255) {
      throw std::invalid_argument("parameter rank out of range");
    }
    w.scalar<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.scalar<std::uint8_t>(static_cast<std::uint8_t>(e.dims.size()));
    size_t count = 1;
    for (auto d : e.dims) {
      w.scalar<std::uint32_t>(d);
      count *= d;
    }
    if (count != e.values.size()) {
      throw std::invalid_argument("parameter '" + e.name +
                                  "' dims do not match value count");
    }
    w.bytes(e.values.data(), e.values.size() * sizeof(float));
  }
  w.close();
}

std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
  BinReader r(path);
  r.expect_magic("VICK");
  r.expect_version(1);
  const auto param_count = r.scalar<std::uint32_t>();
  std::vector<CheckpointEntry> entries(param_count);
  for (auto& e : entries) {
    const auto name_len = r.scalar<std::uint16_t>();
    e.name.resize(name_len);
    r.bytes(e.name.data(), name_len);
    const auto rank = r.scalar<std::uint8_t>();
    if (rank == 0) throw FormatError("'" + path + "' has a rank-0 parameter");
    e.dims.resize(rank);
    size_t count = 1;
    for (auto& d : e.dims) {
      d = r.scalar<std::uint32_t>();
      count *= d;
      if (count > (1u << 30)) throw FormatError("'" + path + "' parameter too large");
    }
    e.values.resize(count);
    r.bytes(e.values.data(), count * sizeof(float));
  }
  return entries;
}

void write_manifest(const std::string& path,
                    const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot open '" + path + "' for writing");
  out.precision(17);
  for (const auto& e : entries) {
    out << e.index << ' ' << e.id;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out << ' ' << e.rotation(r, c);
    out << '\n';
  }
  if (!out) throw FileError("error while writing '" + path + "'");
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open '" + path + "' for reading");
  std::vector<ManifestEntry> entries;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream is(line);
    ManifestEntry e;
    is >> e.index >> e.id;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) is >> e.rotation(r, c);
    if (!is) {
      std::ostringstream os;
      os << "'" << path << "' line " << line_no << " is not a manifest entry";
      throw FormatError(os.str());
    }
    entries.push_back(e);
  }
  return entries;
}

std::string sample_file_name(std::uint64_t id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%06llu.vipc",
                static_cast<unsigned long long>(id));
  return buf;
}

}  // namespace vinet

#include "vinet/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "vinet/common.hpp"

namespace vinet {

namespace {
std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}
}  // namespace

KeyValues KeyValues::parse(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      std::ostringstream os;
      os << "config line " << line_no << " is not key=value: '" << line << "'";
      throw FormatError(os.str());
    }
    kv.items_.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValues KeyValues::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string KeyValues::str() const {
  std::ostringstream os;
  for (const auto& [k, v] : items_) os << k << '=' << v << '\n';
  return os.str();
}

const std::string* KeyValues::find(const std::string& key) const {
  // last occurrence wins, so later lines can override earlier ones
  const std::string* found = nullptr;
  for (const auto& [k, v] : items_) {
    if (k == key) found = &v;
  }
  return found;
}

bool KeyValues::has(const std::string& key) const { return find(key) != nullptr; }

std::string KeyValues::get_str(const std::string& key) const {
  const std::string* v = find(key);
  if (!v) throw FormatError("config is missing required key '" + key + "'");
  return *v;
}

std::string KeyValues::get_str(const std::string& key,
                               const std::string& fallback) const {
  const std::string* v = find(key);
  return v ? *v : fallback;
}

std::int64_t KeyValues::get_int(const std::string& key, std::int64_t fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  char* end = nullptr;
  const long long parsed = std::strtoll(v->c_str(), &end, 10);
  if (end == v->c_str() || *end != '\0') {
    throw FormatError("config key '" + key + "' is not an integer: '" + *v + "'");
  }
  return parsed;
}

double KeyValues::get_double(const std::string& key, double fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  char* end = nullptr;
  const double parsed = std::strtod(v->c_str(), &end);
  if (end == v->c_str() || *end != '\0') {
    throw FormatError("config key '" + key + "' is not a number: '" + *v + "'");
  }
  return parsed;
}

bool KeyValues::get_bool(const std::string& key, bool fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw FormatError("config key '" + key + "' is not a boolean: '" + *v + "'");
}

void KeyValues::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : items_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  items_.emplace_back(key, value);
}

void KeyValues::set_int(const std::string& key, std::int64_t value) {
  set(key, std::to_string(value));
}

void KeyValues::set_double(const std::string& key, double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  set(key, buf);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

}  // namespace vinet

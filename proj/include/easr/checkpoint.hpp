#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "easr/tape.hpp"
#include "easr/tensor.hpp"

namespace easr {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace io {

inline void write_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_f32(std::ostream& os, float v) {
  write_u32(os, std::bit_cast<std::uint32_t>(v));
}

inline void write_f64(std::ostream& os, double v) {
  const auto u = std::bit_cast<std::uint64_t>(v);
  write_u32(os, static_cast<std::uint32_t>(u & 0xffffffffull));
  write_u32(os, static_cast<std::uint32_t>(u >> 32));
}

inline std::uint16_t read_u16(std::istream& is, const char* what) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2)) {
    throw IoError(std::string("truncated file while reading ") + what);
  }
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw IoError(std::string("truncated file while reading ") + what);
  }
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline float read_f32(std::istream& is, const char* what) {
  return std::bit_cast<float>(read_u32(is, what));
}

inline double read_f64(std::istream& is, const char* what) {
  const std::uint32_t lo = read_u32(is, what);
  const std::uint32_t hi = read_u32(is, what);
  return std::bit_cast<double>((static_cast<std::uint64_t>(hi) << 32) | lo);
}

inline void expect_magic(std::istream& is, const char* expected,
                         const std::string& path) {
  char found[5] = {0, 0, 0, 0, 0};
  is.read(found, 4);
  if (!is || std::strncmp(found, expected, 4) != 0) {
    throw IoError("bad magic in " + path + ": expected \"" + expected +
                  "\", found \"" + std::string(found, is.gcount()) + "\"");
  }
}

}  // namespace io

// Parameter checkpoint, magic "EAM1":
//   "EAM1" | param count u32 LE | per parameter:
//     name length u32 LE, UTF-8 name, rank u32 LE, extents u32 LE each,
//     values f64 LE row-major.
inline void save_checkpoint(const std::string& path, const ParameterSet& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write("EAM1", 4);
  io::write_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    io::write_u32(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    io::write_u32(os, static_cast<std::uint32_t>(p->value.rank()));
    for (auto e : p->value.shape()) {
      io::write_u32(os, static_cast<std::uint32_t>(e));
    }
    for (double v : p->value.values()) io::write_f64(os, v);
  }
  if (!os) throw IoError("write failed for " + path);
}

// Loads a checkpoint into a fresh ParameterSet (names and shapes come from
// the file).
inline ParameterSet load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  io::expect_magic(is, "EAM1", path);
  const std::uint32_t count = io::read_u32(is, "parameter count");
  ParameterSet out;
  for (std::uint32_t p = 0; p < count; ++p) {
    const std::uint32_t name_len = io::read_u32(is, "name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) {
      throw IoError("truncated file while reading parameter name in " + path);
    }
    const std::uint32_t rank = io::read_u32(is, "rank");
    std::vector<std::size_t> shape(rank);
    std::size_t total = 1;
    for (auto& e : shape) {
      e = io::read_u32(is, "extent");
      if (e == 0 || total > (1u << 30) / std::max<std::size_t>(e, 1)) {
        throw IoError("implausible parameter shape in " + path);
      }
      total *= e;
    }
    Tensor t(shape);
    for (auto& v : t.values()) v = io::read_f64(is, "parameter values");
    out.adopt(name, std::move(t));
  }
  return out;
}

// Loads checkpoint values into an existing model's parameters; names and
// shapes must match exactly.
inline void load_checkpoint_into(const std::string& path, ParameterSet& params) {
  ParameterSet loaded = load_checkpoint(path);
  if (loaded.size() != params.size()) {
    throw IoError(path + ": checkpoint has " + std::to_string(loaded.size()) +
                  " parameters, model expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (loaded[i].name != params[i].name) {
      throw IoError(path + ": parameter name mismatch at position " +
                    std::to_string(i) + ": '" + loaded[i].name + "' vs '" +
                    params[i].name + "'");
    }
    require_same_shape(loaded[i].value, params[i].value, "load_checkpoint");
    params[i].value = std::move(loaded[i].value);
  }
}

// UTF-8 "key = value" block stored next to a checkpoint (model
// hyperparameters, inventory, blank index). Keys are unique and emitted in
// insertion order.
class MetaBlock {
 public:
  void set(const std::string& key, const std::string& value) {
    for (auto& kv : items_) {
      if (kv.first == key) {
        kv.second = value;
        return;
      }
    }
    items_.emplace_back(key, value);
  }

  void set_int(const std::string& key, long long v) { set(key, std::to_string(v)); }

  void set_double(const std::string& key, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    set(key, buf);
  }

  bool has(const std::string& key) const { return find(key) != nullptr; }

  const std::string& get(const std::string& key) const {
    if (const std::string* v = find(key)) return *v;
    throw IoError("missing meta key: " + key);
  }

  long long get_int(const std::string& key) const {
    return std::stoll(get(key));
  }

  double get_double(const std::string& key) const { return std::stod(get(key)); }

  const std::vector<std::pair<std::string, std::string>>& items() const {
    return items_;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    for (const auto& [k, v] : items_) os << k << " = " << v << "\n";
    if (!os) throw IoError("write failed for " + path);
  }

  static MetaBlock load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    MetaBlock mb;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) {
        throw IoError(path + ":" + std::to_string(lineno) +
                      ": expected 'key = value'");
      }
      mb.set(line.substr(0, eq), line.substr(eq + 3));
    }
    return mb;
  }

 private:
  const std::string* find(const std::string& key) const {
    for (const auto& kv : items_) {
      if (kv.first == key) return &kv.second;
    }
    return nullptr;
  }

  std::vector<std::pair<std::string, std::string>> items_;
};

}  // namespace easr

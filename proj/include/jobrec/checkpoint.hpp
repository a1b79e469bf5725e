#pragma once
// Self-describing binary checkpoint container: a JSON metadata header plus
// named tensors (parameter values with optimizer moments, and extra state
// tensors). Saving the result of a load reproduces the file byte-for-byte.

#include "jobrec/params.hpp"

#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <map>
#include <string>

namespace jobrec {

namespace ckpt_detail {

constexpr char kMagic[8] = {'J', 'R', 'C', 'P', '0', '0', '0', '1'};
constexpr std::uint8_t kExtraKind = 255;

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

inline void put_u64(std::string& out, std::uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}

inline void put_mat(std::string& out, const Mat& m) {
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      double v = m(r, c);
      char b[8];
      std::memcpy(b, &v, 8);
      out.append(b, 8);
    }
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, data_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, data_.data() + pos_, 8);
    pos_ += 8;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Mat mat() {
    std::uint32_t rows = u32(), cols = u32();
    Mat m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) {
        need(8);
        double v;
        std::memcpy(&v, data_.data() + pos_, 8);
        pos_ += 8;
        m(r, c) = v;
      }
    return m;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size())
      throw ParseError("checkpoint truncated", static_cast<long>(pos_));
  }
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace ckpt_detail

struct Checkpoint {
  nlohmann::json meta;
  ParamStore params;
  std::map<std::string, Mat> extras;  // ordered for stable serialization
};

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  using namespace ckpt_detail;
  std::string out(kMagic, sizeof(kMagic));
  std::string meta = ck.meta.dump();
  put_u64(out, meta.size());
  out += meta;
  put_u32(out, static_cast<std::uint32_t>(ck.params.entries().size() +
                                          ck.extras.size()));
  for (const auto& e : ck.params.entries()) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    out.push_back(static_cast<char>(e.kind));
    put_mat(out, e.value);
    put_mat(out, e.m);
    put_mat(out, e.v);
  }
  for (const auto& [name, m] : ck.extras) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(kExtraKind));
    put_mat(out, m);
  }
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path,
                            const Checkpoint& ck) {
  atomic_write_file(path, serialize_checkpoint(ck));
}

inline Checkpoint parse_checkpoint(const std::string& data) {
  using namespace ckpt_detail;
  if (data.size() < sizeof(kMagic) ||
      std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0)
    throw ParseError("not a checkpoint file", 1);
  Reader r(data.substr(sizeof(kMagic)));
  std::uint64_t meta_len = r.u64();
  Checkpoint ck;
  ck.meta = nlohmann::json::parse(r.bytes(meta_len));
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    std::uint8_t kind = static_cast<std::uint8_t>(r.bytes(1)[0]);
    if (kind == kExtraKind) {
      ck.extras[name] = r.mat();
      continue;
    }
    Mat value = r.mat();
    Mat m = r.mat();
    Mat v = r.mat();
    int id = ck.params.add(name, static_cast<int>(value.rows()),
                           static_cast<int>(value.cols()),
                           static_cast<ParamKind>(kind));
    auto& entry = ck.params.entries()[static_cast<std::size_t>(id)];
    entry.value = std::move(value);
    entry.m = std::move(m);
    entry.v = std::move(v);
  }
  if (!r.done()) throw ParseError("trailing bytes in checkpoint", 1);
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file(path));
}

}  // namespace jobrec

#pragma once

#include "vfevent/model.hpp"
#include "vfevent/serialization.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <variant>

namespace vfevent {

/// Keyed binary archive. Layout (little-endian):
///   "VFEVARCH" | u32 version | u32 entry count | entries sorted by key
///   entry = u32 key length | key | u8 tag | payload
///   tag 0 (matrix): u64 rows | u64 cols | rows*cols f64, column-major
///   tag 1 (string): u64 length | bytes
class Archive {
 public:
  static constexpr char kMagic[8] = {'V', 'F', 'E', 'V', 'A', 'R', 'C', 'H'};
  static constexpr std::uint32_t kVersion = 1;

  using Value = std::variant<Matrix, std::string>;

  void put(const std::string& key, Matrix value) { entries_[key] = std::move(value); }
  void put(const std::string& key, std::string value) { entries_[key] = std::move(value); }
  void put_scalar(const std::string& key, double value) { entries_[key] = Matrix::Constant(1, 1, value); }

  bool contains(const std::string& key) const { return entries_.count(key) > 0; }
  std::size_t size() const { return entries_.size(); }
  const std::map<std::string, Value>& entries() const { return entries_; }

  const Matrix& matrix(const std::string& key) const {
    const auto* m = std::get_if<Matrix>(&lookup(key));
    if (!m) throw Error(ErrorKind::kSchema, "archive entry '" + key + "' is not a matrix");
    return *m;
  }

  const std::string& string(const std::string& key) const {
    const auto* s = std::get_if<std::string>(&lookup(key));
    if (!s) throw Error(ErrorKind::kSchema, "archive entry '" + key + "' is not a string");
    return *s;
  }

  double scalar(const std::string& key) const {
    const Matrix& m = matrix(key);
    if (m.size() != 1) throw Error(ErrorKind::kSchema, "archive entry '" + key + "' is not a scalar");
    return m(0, 0);
  }

  void write(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
    out.write(kMagic, sizeof kMagic);
    put_u32(out, kVersion);
    put_u32(out, std::uint32_t(entries_.size()));
    for (const auto& [key, value] : entries_) {
      put_u32(out, std::uint32_t(key.size()));
      out.write(key.data(), std::streamsize(key.size()));
      if (const auto* m = std::get_if<Matrix>(&value)) {
        out.put(0);
        put_u64(out, std::uint64_t(m->rows()));
        put_u64(out, std::uint64_t(m->cols()));
        for (Eigen::Index i = 0; i < m->size(); ++i) put_f64(out, m->data()[i]);
      } else {
        const auto& s = std::get<std::string>(value);
        out.put(1);
        put_u64(out, s.size());
        out.write(s.data(), std::streamsize(s.size()));
      }
    }
    if (!out) throw Error(ErrorKind::kIo, "failed writing " + path.string());
  }

  static Archive read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::kIo, "cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0) {
      throw Error(ErrorKind::kSchema, path.string() + " is not a model archive");
    }
    const std::uint32_t version = get_u32(in);
    if (version != kVersion) {
      throw Error(ErrorKind::kSchema, "unsupported archive version " + std::to_string(version));
    }
    Archive archive;
    const std::uint32_t count = get_u32(in);
    for (std::uint32_t e = 0; e < count; ++e) {
      std::string key(get_u32(in), '\0');
      in.read(key.data(), std::streamsize(key.size()));
      const int tag = in.get();
      if (tag == 0) {
        const auto rows = Eigen::Index(get_u64(in));
        const auto cols = Eigen::Index(get_u64(in));
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get_f64(in);
        archive.entries_[key] = std::move(m);
      } else if (tag == 1) {
        std::string s(get_u64(in), '\0');
        in.read(s.data(), std::streamsize(s.size()));
        archive.entries_[key] = std::move(s);
      } else {
        throw Error(ErrorKind::kSchema, "corrupt archive entry '" + key + "'");
      }
      if (!in) throw Error(ErrorKind::kSchema, "truncated archive " + path.string());
    }
    return archive;
  }

 private:
  const Value& lookup(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw Error(ErrorKind::kSchema, "archive has no entry '" + key + "'");
    return it->second;
  }

  static void put_u32(std::ostream& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.put(char((v >> (8 * i)) & 0xff));
  }
  static void put_u64(std::ostream& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.put(char((v >> (8 * i)) & 0xff));
  }
  static void put_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_u64(out, bits);
  }
  static std::uint32_t get_u32(std::istream& in) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(in.get())) << (8 * i);
    return v;
  }
  static std::uint64_t get_u64(std::istream& in) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(in.get())) << (8 * i);
    return v;
  }
  static double get_f64(std::istream& in) {
    const std::uint64_t bits = get_u64(in);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }

  std::map<std::string, Value> entries_;
};

inline Archive to_archive(ModelState& model) {
  Archive ar;
  ar.put("meta.config", to_json(model.config).dump());
  ar.put("meta.labels", Json(model.labels).dump());
  ar.put("meta.vocabulary", Json(model.tokenizer.vocabulary()).dump());
  ar.put_scalar("meta.hash_buckets", double(model.tokenizer.hash_buckets()));
  ar.put("imaginator.schedule",
         Json{{"kind", to_string(model.imaginator.schedule.kind)}, {"timesteps", model.imaginator.schedule.num_steps}}.dump());
  ar.put_scalar("imaginator.omega", model.imaginator.config.omega);
  ar.put("imaginator.codec", model.imaginator.codec->name());
  for (Param* p : model.params()) {
    ar.put("param." + p->name, p->value);
    ar.put_scalar("mask." + p->name, p->trainable ? 1.0 : 0.0);
  }
  char index[16];
  for (std::size_t i = 0; i < model.pool.size(); ++i) {
    std::snprintf(index, sizeof index, "%06zu", i);
    const std::string base = std::string("pool.") + index;
    ar.put(base + ".id", model.pool[i].id);
    ar.put(base + ".text", model.pool[i].text);
    ar.put(base + ".image", Matrix(model.pool[i].image.pixels));
  }
  return ar;
}

inline ModelState from_archive(const Archive& ar) {
  ModelState model;
  try {
    model.config = model_config_from_json(Json::parse(ar.string("meta.config")));
    const auto labels = Json::parse(ar.string("meta.labels")).get<std::vector<std::string>>();
    const auto vocab = Json::parse(ar.string("meta.vocabulary")).get<std::vector<std::string>>();
    model.config.encoder.hash_buckets = std::size_t(ar.scalar("meta.hash_buckets"));
    const Json schedule = Json::parse(ar.string("imaginator.schedule"));
    model.config.imaginator.schedule = parse_schedule_kind(schedule.at("kind").get<std::string>());
    model.config.imaginator.timesteps = schedule.at("timesteps").get<int>();
    model.config.imaginator.omega = ar.scalar("imaginator.omega");
    if (ar.string("imaginator.codec") != "identity") {
      throw Error(ErrorKind::kSchema, "unsupported latent codec '" + ar.string("imaginator.codec") + "'");
    }

    std::vector<std::string> event_types(labels.begin(), labels.end() - 1);
    // Shapes come from the config and vocabulary; values are overwritten below.
    model = init_model(model.config, event_types, vocab, 0);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kSchema, std::string("corrupt checkpoint metadata: ") + e.what());
  }
  for (Param* p : model.params()) {
    const Matrix& value = ar.matrix("param." + p->name);
    if (value.rows() != p->value.rows() || value.cols() != p->value.cols()) {
      throw Error(ErrorKind::kSchema, "parameter '" + p->name + "' has the wrong shape in the checkpoint");
    }
    p->value = value;
    p->zero_grad();
    p->trainable = ar.scalar("mask." + p->name) != 0.0;
  }
  char index[16];
  for (std::size_t i = 0;; ++i) {
    std::snprintf(index, sizeof index, "%06zu", i);
    const std::string base = std::string("pool.") + index;
    if (!ar.contains(base + ".id")) break;
    model.pool.push_back({ar.string(base + ".id"), ar.string(base + ".text"),
                          ImageArray::from_pixels(model.config.resolution, Vector(ar.matrix(base + ".image")))});
  }
  return model;
}

inline void save_checkpoint(ModelState& model, const std::filesystem::path& path) { to_archive(model).write(path); }

inline ModelState load_checkpoint(const std::filesystem::path& path) { return from_archive(Archive::read(path)); }

}  // namespace vfevent

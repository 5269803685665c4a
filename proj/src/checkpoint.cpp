#include "crescendo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace crescendo {
namespace {

constexpr char kTag[8] = {'C', 'R', 'S', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const char*>(p);
    buffer_.insert(buffer_.end(), b, b + n);
  }
  template <typename U>
  void integer(U v) {
    using Bits = std::make_unsigned_t<U>;
    auto bits = static_cast<Bits>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      buffer_.push_back(static_cast<char>(bits & 0xff));
      if constexpr (sizeof(U) > 1) bits = static_cast<Bits>(bits >> 8);
    }
  }
  void text(const std::string& s) {
    integer<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
  template <typename T>
  void scalars(const Tensor<T>& t) {
    using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    for (T v : t.data()) integer(std::bit_cast<Bits>(v));
  }
  const std::vector<char>& buffer() const { return buffer_; }

 private:
  std::vector<char> buffer_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> data) : data_(std::move(data)) {}

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }

  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError("checkpoint is truncated", pos_);
  }
  template <typename U>
  U integer() {
    need(sizeof(U));
    std::make_unsigned_t<U> bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bits |= static_cast<std::make_unsigned_t<U>>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return static_cast<U>(bits);
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  template <typename T>
  void scalars(Tensor<T>& t) {
    using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    need(t.size() * sizeof(T));
    for (auto& v : t.data()) v = std::bit_cast<T>(integer<Bits>());
  }

 private:
  std::vector<char> data_;
  std::size_t pos_ = 0;
};

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const std::string& config, const ParameterStore<T>& params) {
  Writer w;
  w.bytes(kTag, sizeof kTag);
  w.integer<std::uint32_t>(kCheckpointVersion);
  w.integer<std::uint32_t>(sizeof(T));
  w.text(config);
  w.integer<std::uint64_t>(params.size());
  for (const auto& e : params) {
    w.integer<std::uint32_t>(static_cast<std::uint32_t>(e.info.name.size()));
    w.bytes(e.info.name.data(), e.info.name.size());
    w.integer<std::uint8_t>(static_cast<std::uint8_t>(e.info.role));
    w.integer<std::uint8_t>(e.trainable ? 1 : 0);
    w.integer<std::int32_t>(e.info.block);
    w.integer<std::int32_t>(e.info.branch);
    w.integer<std::int32_t>(e.info.unit);
    w.integer<std::uint32_t>(static_cast<std::uint32_t>(e.info.shape.size()));
    for (std::size_t d : e.info.shape) w.integer<std::uint64_t>(d);
    w.scalars(e.value);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint " + path.string(), 0);
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw FormatError("failed writing checkpoint " + path.string(), 0);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string(), 0);
  Reader r(std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));
  if (r.text(sizeof kTag) != std::string(kTag, sizeof kTag)) throw FormatError("not a checkpoint file", 0);
  const auto version_at = r.offset();
  if (const auto version = r.integer<std::uint32_t>(); version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
  }
  const auto width_at = r.offset();
  if (const auto width = r.integer<std::uint32_t>(); width != sizeof(T)) {
    throw FormatError("checkpoint holds " + std::to_string(width) + "-byte scalars, expected " +
                          std::to_string(sizeof(T)),
                      width_at);
  }
  Checkpoint<T> ckpt;
  ckpt.config = r.text(r.integer<std::uint64_t>());
  const auto count = r.integer<std::uint64_t>();
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto entry_at = r.offset();
    ParamInfo info;
    info.name = r.text(r.integer<std::uint32_t>());
    const auto role = r.integer<std::uint8_t>();
    if (role > static_cast<std::uint8_t>(ParamRole::FcBias)) throw FormatError("bad parameter role", entry_at);
    info.role = static_cast<ParamRole>(role);
    const bool trainable = r.integer<std::uint8_t>() != 0;
    info.block = r.integer<std::int32_t>();
    info.branch = r.integer<std::int32_t>();
    info.unit = r.integer<std::int32_t>();
    const auto rank = r.integer<std::uint32_t>();
    if (rank > 8) throw FormatError("bad tensor rank for '" + info.name + "'", entry_at);
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto extent = r.integer<std::uint64_t>();
      if (extent == 0 || extent > (1ULL << 32)) throw FormatError("bad extent for '" + info.name + "'", entry_at);
      info.shape.push_back(static_cast<std::size_t>(extent));
    }
    r.need(shape_size(info.shape) * sizeof(T));
    Tensor<T> value(info.shape);
    r.scalars(value);
    try {
      ckpt.params.add(std::move(info), std::move(value), trainable);
    } catch (const Error& e) {
      throw FormatError(e.what(), entry_at);
    }
  }
  if (!r.done()) throw FormatError("trailing bytes after the last entry", r.offset());
  return ckpt;
}

template void save_checkpoint<float>(const std::filesystem::path&, const std::string&, const ParameterStore<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const std::string&,
                                      const ParameterStore<double>&);
template Checkpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace crescendo

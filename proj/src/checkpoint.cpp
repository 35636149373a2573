#include "drpo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "drpo/error.hpp"

namespace drpo {

namespace {

constexpr char kMagic[4] = {'D', 'R', 'P', 'O'};

template <typename T>
void put(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  out.append(bytes.data(), bytes.size());
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    std::array<char, sizeof(T)> raw{};
    take(raw.data(), raw.size());
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(raw.begin(), raw.end());
    }
    return std::bit_cast<T>(raw);
  }

  std::string get_string(std::size_t n) {
    std::string s(n, '\0');
    take(s.data(), n);
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void take(char* dst, std::size_t n) {
    if (remaining() < n) {
      throw Error(ErrorCode::corrupt_header, "checkpoint truncated at byte " + std::to_string(pos_));
    }
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  ckpt.params.validate();
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint16_t>(out, kCheckpointVersion);
  put<std::uint8_t>(out, ckpt.params.activation == Activation::tanh ? 0 : 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.params.arch.size()));
  for (auto n : ckpt.params.arch) put<std::uint32_t>(out, static_cast<std::uint32_t>(n));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.schedule.steps));
  put<double>(out, ckpt.schedule.beta_start);
  put<double>(out, ckpt.schedule.beta_end);
  put<std::uint8_t>(out, 0);  // linear
  const std::string text = ckpt.config.to_text();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  put<std::uint64_t>(out, ckpt.params.theta.size());
  for (double v : ckpt.params.theta) put<double>(out, v);
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.get_string(4) != std::string_view(kMagic, 4)) {
    throw Error(ErrorCode::corrupt_header, "bad magic bytes");
  }
  const auto version = in.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::version_mismatch, "checkpoint version " + std::to_string(version) +
                                                 ", expected " + std::to_string(kCheckpointVersion));
  }
  Checkpoint ckpt;
  const auto activation = in.get<std::uint8_t>();
  if (activation > 1) throw Error(ErrorCode::corrupt_header, "unknown activation tag");
  ckpt.params.activation = activation == 0 ? Activation::tanh : Activation::relu;
  const auto layers = in.get<std::uint32_t>();
  if (layers < 2 || layers > 64) throw Error(ErrorCode::corrupt_header, "implausible layer count");
  for (std::uint32_t k = 0; k < layers; ++k) ckpt.params.arch.push_back(in.get<std::uint32_t>());
  ckpt.schedule.steps = static_cast<int>(in.get<std::uint32_t>());
  ckpt.schedule.beta_start = in.get<double>();
  ckpt.schedule.beta_end = in.get<double>();
  if (in.get<std::uint8_t>() != 0) throw Error(ErrorCode::corrupt_header, "unknown schedule kind");
  const auto text_len = in.get<std::uint32_t>();
  ckpt.config = ConfigMap::parse(in.get_string(text_len));
  const auto count = in.get<std::uint64_t>();
  if (count != parameter_count(ckpt.params.arch)) {
    throw Error(ErrorCode::corrupt_header, "theta count does not match architecture");
  }
  if (in.remaining() != count * sizeof(double)) {
    throw Error(ErrorCode::corrupt_header, "payload size does not match theta count");
  }
  ckpt.params.theta.resize(count);
  for (auto& v : ckpt.params.theta) v = in.get<double>();
  try {
    ckpt.params.validate();
    (void)ckpt.schedule.build();
  } catch (const Error& e) {
    throw Error(ErrorCode::corrupt_header, e.what());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::io_error, "write failed for " + path.string());
}

void save_checkpoint(const DenoiserParams& params, const DiffusionSchedule& schedule,
                     const ConfigMap& config, const std::filesystem::path& path) {
  save_checkpoint(Checkpoint{params, {schedule.steps(), schedule.beta_start(), schedule.beta_end()},
                             config},
                  path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

}  // namespace drpo

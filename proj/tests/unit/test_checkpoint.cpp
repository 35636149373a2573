#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "drpo/checkpoint.hpp"
#include "test_util.hpp"

using namespace drpo;
namespace fs = std::filesystem;

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.params = init_params(denoiser_arch(2, 3, std::vector<std::size_t>{7, 5}), 3);
  c.params.theta[4] = 1.0 / 3.0;
  c.params.theta[5] = -0.0;
  c.params.theta[6] = 5e-324;
  c.schedule = ScheduleSpec{40, 2e-4, 0.07};
  c.config = ConfigMap::parse("loss = rpo\ntau = 0.5\n");
  return c;
}

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "drpo_test_ckpt";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("checkpoint round-trip is bit-exact") {
  const Checkpoint c = sample_checkpoint();
  const std::string bytes = encode_checkpoint(c);
  CHECK(bytes.substr(0, 4) == "DRPO");
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.params == c.params);
  CHECK(std::signbit(back.params.theta[5]));
  CHECK(back.schedule.steps == 40);
  CHECK(back.schedule.beta_start == 2e-4);
  CHECK(back.schedule.beta_end == 0.07);
  CHECK(back.config.to_text() == c.config.to_text());
  CHECK(encode_checkpoint(back) == bytes);

  const fs::path p = temp_path("a.ckpt");
  save_checkpoint(c, p);
  CHECK(encode_checkpoint(load_checkpoint(p)) == bytes);

  const fs::path q = temp_path("b.ckpt");
  save_checkpoint(c.params, c.schedule.build(), c.config, q);
  CHECK(encode_checkpoint(load_checkpoint(q)) == bytes);
}

TEST_CASE("layout is little-endian") {
  const std::string bytes = encode_checkpoint(sample_checkpoint());
  // version u16 = 1
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);
  CHECK(static_cast<unsigned char>(bytes[5]) == 0);
  // layer count u32 = 4
  CHECK(static_cast<unsigned char>(bytes[7]) == 4);
  CHECK(static_cast<unsigned char>(bytes[8]) == 0);
}

TEST_CASE("truncation and corruption") {
  const std::string bytes = encode_checkpoint(sample_checkpoint());
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{5}, std::size_t{20},
                          bytes.size() / 2, bytes.size() - 1}) {
    CHECK_CODE(decode_checkpoint(bytes.substr(0, cut)), corrupt_header);
  }
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_CODE(decode_checkpoint(bad_magic), corrupt_header);
  CHECK_CODE(decode_checkpoint(bytes + "extra"), corrupt_header);

  std::string future = bytes;
  future[4] = 7;
  try {
    decode_checkpoint(future);
    FAIL("expected version mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::version_mismatch);
    const std::string msg = e.what();
    CHECK(msg.find('7') != std::string::npos);
    CHECK(msg.find('1') != std::string::npos);
  }

  const fs::path p = temp_path("truncated.ckpt");
  {
    std::ofstream out(p, std::ios::binary);
    out << bytes.substr(0, bytes.size() - 9);
  }
  CHECK_CODE(load_checkpoint(p), corrupt_header);
  CHECK_CODE(load_checkpoint(temp_path("missing.ckpt")), io_error);
  CHECK_CODE(save_checkpoint(sample_checkpoint(), "/nonexistent_dir/x.ckpt"), io_error);
}

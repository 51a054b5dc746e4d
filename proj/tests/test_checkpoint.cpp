#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "gedi/checkpoint.hpp"
#include "gedi/errors.hpp"
#include "test_util.hpp"

using namespace gedi;

namespace {

ParamSet sample_params() {
  Rng rng(2);
  ParamSet p;
  p.add("enc.w", gedi::testing::uniform(3, 4, rng));
  p.add("enc.b", gedi::testing::uniform(1, 4, rng));
  p.add("head.scalar", Matrix::Constant(1, 1, -1.0 / 3.0));
  return p;
}

}  // namespace

TEST_CASE("checkpoint round-trips values bit for bit with metadata") {
  const ParamSet p = sample_params();
  const nlohmann::json meta = {{"version", "x"}, {"seed", 4}};
  const Checkpoint c = deserialize_checkpoint(serialize_checkpoint(p, meta));
  CHECK(c.params == p);
  CHECK(c.metadata == meta);
}

TEST_CASE("checkpoint layout: magic, little-endian header length, float64 payload") {
  const ParamSet p = sample_params();
  const std::string bytes = serialize_checkpoint(p);
  REQUIRE(bytes.size() > 16);
  CHECK(bytes.substr(0, 8) == "GEDICKPT");
  std::uint64_t hlen = 0;
  for (int i = 7; i >= 0; --i) hlen = (hlen << 8) | static_cast<unsigned char>(bytes[8 + i]);
  const nlohmann::json header = nlohmann::json::parse(bytes.substr(16, hlen));
  const Index values = p.total_size();
  CHECK(header.at("payload_bytes").get<std::size_t>() == static_cast<std::size_t>(values) * 8);
  CHECK(bytes.size() == 16 + hlen + static_cast<std::size_t>(values) * 8);
  // First payload value is enc.w(0, 0) in row-major order; second is enc.w(0, 1).
  double first = 0.0, second = 0.0;
  std::memcpy(&first, bytes.data() + 16 + hlen, 8);
  std::memcpy(&second, bytes.data() + 16 + hlen + 8, 8);
  CHECK(first == p.at("enc.w")(0, 0));
  CHECK(second == p.at("enc.w")(0, 1));
}

TEST_CASE("truncated or malformed checkpoints are parse errors") {
  const std::string bytes = serialize_checkpoint(sample_params());
  CHECK_THROWS_AS(deserialize_checkpoint(""), ParseError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, 12)), ParseError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 1)), ParseError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad_magic), ParseError);
  std::string bad_json = bytes;
  bad_json[16] = '#';
  CHECK_THROWS_AS(deserialize_checkpoint(bad_json), ParseError);
}

TEST_CASE("checkpoint files save and load") {
  const auto path = std::filesystem::temp_directory_path() / "gedi_test_checkpoint.bin";
  const ParamSet p = sample_params();
  save_checkpoint(path, p, {{"k", 1}});
  const Checkpoint c = load_checkpoint(path);
  CHECK(c.params == p);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
}

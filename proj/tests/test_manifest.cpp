#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <string>

#include "kinnet/manifest.hpp"
#include "kinnet/text.hpp"

using namespace kinnet;

TEST_CASE("sha256 matches the published test vectors", "[manifest]") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
  CHECK(sha256_hex(std::string(1000000, 'a')) ==
        "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0");
}

TEST_CASE("sha256 is independent of update chunking", "[manifest]") {
  const std::string data = "abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq";
  detail::Sha256 chunked;
  for (std::size_t i = 0; i < data.size(); i += 7)
    chunked.update(data.data() + i, std::min<std::size_t>(7, data.size() - i));
  CHECK(chunked.hex_digest() == sha256_hex(data));
}

TEST_CASE("manifests survive a json round trip", "[manifest]") {
  RunManifest m;
  m.command = "train";
  m.rng_seed = 42;
  m.cell_seeds = {42, 43, 44};
  m.config_text = "[training]\nmode = stiff\n";
  m.timings = {{"solve", 1.25}, {"train", 310.5}};
  m.wall_seconds = 312.0;
  m.record("loss.csv", "step,total_loss\n0,1\n");
  m.record("checkpoint.txt", "widths=1,8,2\n");

  const std::string text = manifest_to_json(m);
  const RunManifest back = manifest_from_json(text);
  CHECK(back.command == m.command);
  CHECK(back.tool_version == m.tool_version);
  CHECK(back.rng_seed == 42);
  CHECK(back.cell_seeds == m.cell_seeds);
  CHECK(back.config_text == m.config_text);
  CHECK(back.wall_seconds == 312.0);
  REQUIRE(back.timings.size() == 2);
  CHECK(back.timings[1].first == "train");
  CHECK(back.timings[1].second == 310.5);
  REQUIRE(back.files.size() == 2);
  CHECK(back.files[0].path == "loss.csv");
  CHECK(back.files[0].bytes == std::string("step,total_loss\n0,1\n").size());
  CHECK(back.files[0].sha256 == sha256_hex("step,total_loss\n0,1\n"));
  CHECK(manifest_to_json(back) == text);
}

TEST_CASE("broken manifest json is a parse error", "[manifest]") {
  CHECK_THROWS_AS(manifest_from_json("not json"), parse_error);
  CHECK_THROWS_AS(manifest_from_json("{\"command\": \"train\"}"), parse_error);
}

TEST_CASE("mismatch scan reports altered and missing files", "[manifest]") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "kinnet_manifest_test";
  fs::remove_all(dir);
  fs::create_directories(dir);

  RunManifest m;
  write_text_file((dir / "a.csv").string(), "t,y\n0,1\n");
  m.record("a.csv", "t,y\n0,1\n");
  write_text_file((dir / "b.csv").string(), "t,y\n0,2\n");
  m.record("b.csv", "t,y\n0,2\n");
  m.record("gone.csv", "never written\n");

  auto bad = manifest_mismatches(m, dir.string());
  REQUIRE(bad.size() == 1);
  CHECK(bad[0] == "gone.csv");

  write_text_file((dir / "b.csv").string(), "t,y\n0,3\n");
  bad = manifest_mismatches(m, dir.string());
  REQUIRE(bad.size() == 2);
  CHECK(bad[0] == "b.csv");
  fs::remove_all(dir);
}

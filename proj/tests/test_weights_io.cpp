#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mtrc/weights_io.hpp"
#include "test_util.hpp"

using namespace mtrc;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const char* name) {
  return (fs::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE_BEGIN("weights_io");

TEST_CASE("save/load round trip restores float-representable weights") {
  const ArchConfig cfg = testutil::toy_config();
  ModelParams params = init_parameters(cfg, 5);
  // force values onto the float grid so the round trip is exact
  for_each_value(params, [](double& v) { v = static_cast<float>(v); });

  const std::string path = temp_path("mtrc_weights_test.bin");
  save_params(path, params);
  ModelParams back = load_params(path);
  CHECK(back.config.feature_dim == cfg.feature_dim);
  CHECK(back.config.encoder.size() == cfg.encoder.size());

  bool equal = true;
  for (int pi = 0; pi < kNumPartitions; ++pi) {
    const auto part = static_cast<Partition>(pi);
    const auto& a = params.partition(part);
    const auto& b = back.partition(part);
    REQUIRE(a.items.size() == b.items.size());
    for (size_t i = 0; i < a.items.size(); ++i)
      for (int64_t j = 0; j < a.items[i].tensor.size(); ++j)
        if (a.items[i].tensor[j] != b.items[i].tensor[j]) equal = false;
  }
  CHECK(equal);

  // save -> load -> save produces identical bytes
  const std::string path2 = temp_path("mtrc_weights_test2.bin");
  save_params(path2, back);
  CHECK(slurp(path) == slurp(path2));
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("backbone-only load and shape mismatch error") {
  const ArchConfig cfg = testutil::toy_config();
  ModelParams donor = init_parameters(cfg, 7);
  const std::string path = temp_path("mtrc_backbone_test.bin");
  save_params(path, donor);

  ModelParams fresh = init_parameters(cfg, 8, path);
  const auto& a = donor.backbone.at("stage0/conv/W");
  const auto& b = fresh.backbone.at("stage0/conv/W");
  for (int64_t i = 0; i < a.size(); ++i)
    CHECK(b[i] == static_cast<double>(static_cast<float>(a[i])));
  // non-backbone partitions come from the fresh seed, not the file
  CHECK(fresh.tool_head.at("W")[0] != donor.tool_head.at("W")[0]);

  ArchConfig wider = cfg;
  wider.encoder.back().out_channels = 8;
  wider.feature_dim = 8;
  CHECK_THROWS_AS(init_parameters(wider, 8, path), IoError);
  std::remove(path.c_str());
}

TEST_CASE("malformed files are rejected") {
  const std::string path = temp_path("mtrc_bad_container.bin");
  std::ofstream(path, std::ios::binary) << "not a container";
  CHECK_THROWS_AS(read_container(path), IoError);
  CHECK_THROWS_AS(read_container(temp_path("mtrc_missing_file.bin")), IoError);
  std::remove(path.c_str());
}

TEST_SUITE_END();

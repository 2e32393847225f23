#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "flexireg/config.hpp"

using namespace flexireg;

TEST_SUITE("config") {

TEST_CASE("get/set round trip for every key") {
  RunConfig cfg;
  for (const auto& [key, value] : cfg.to_map()) {
    RunConfig other;
    other.set(key, value);
    CHECK(other.get(key) == value);
  }
}

TEST_CASE("set parses typed values and rejects unknown keys") {
  RunConfig cfg;
  cfg.set("d", "32");
  CHECK(cfg.d == 32);
  cfg.set("cell_lr", "0.25");
  CHECK(cfg.cell_lr == doctest::Approx(0.25));
  cfg.set("seed", "123456789012345");
  CHECK(cfg.seed == 123456789012345ull);
  cfg.set("provider", "remote");
  CHECK(cfg.provider == "remote");
  CHECK_THROWS(cfg.set("no_such_key", "1"));
  CHECK_THROWS(cfg.set("d", "not-a-number"));
}

TEST_CASE("config hash tracks content") {
  RunConfig a, b;
  CHECK(a.config_hash() == b.config_hash());
  b.set("edge_length", "150");
  CHECK(a.config_hash() != b.config_hash());
}

TEST_CASE("file round trip with comments and blanks") {
  const std::string path =
      (std::filesystem::temp_directory_path() / "cfg_rt.conf").string();
  {
    std::ofstream out(path);
    out << "# a comment\n\n";
    out << "d = 24\n";
    out << "out_dir=/tmp/elsewhere\n";
    out << "tau=0.75\n";
  }
  const RunConfig cfg = load_config_file(path);
  CHECK(cfg.d == 24);
  CHECK(cfg.out_dir == "/tmp/elsewhere");
  CHECK(cfg.tau == doctest::Approx(0.75));
  // untouched keys keep their defaults
  CHECK(cfg.heads == 4);

  const std::string path2 =
      (std::filesystem::temp_directory_path() / "cfg_rt2.conf").string();
  save_config_file(cfg, path2);
  const RunConfig back = load_config_file(path2);
  CHECK(back.to_map() == cfg.to_map());
  std::remove(path.c_str());
  std::remove(path2.c_str());

  CHECK_THROWS(load_config_file("/nonexistent/config/file.conf"));
}

TEST_CASE("defaults follow the published profile") {
  const RunConfig cfg;
  CHECK(cfg.d == 144);
  CHECK(cfg.edge_length == doctest::Approx(200.0));
  CHECK(cfg.heads == 4);
  CHECK(cfg.cell_epochs == 2000);
  CHECK(cfg.cell_lr == doctest::Approx(1e-4));
  CHECK(cfg.prompt_epochs == 1000);
  CHECK(cfg.prompt_lr == doctest::Approx(5e-4));
  CHECK(cfg.prompt_weight_decay == doctest::Approx(5e-4));
  CHECK(cfg.margin == doctest::Approx(1.0));
  CHECK(cfg.tau == doctest::Approx(0.5));
  CHECK(cfg.smooth_l1_beta == doctest::Approx(1.0));
  CHECK(cfg.dropout == doctest::Approx(0.1));
  CHECK(cfg.region_images == 64);
  CHECK(cfg.folds == 10);
  CHECK(cfg.text_dim == 4096);
  CHECK(cfg.sv_dim == 768);
  CHECK(cfg.sat_dim == 512);
}

}  // TEST_SUITE

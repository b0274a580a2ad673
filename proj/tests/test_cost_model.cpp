#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "alter/cost_model.hpp"
#include "support/test_util.hpp"

using namespace alter;

TEST_CASE("linear and block mac counts") {
  CHECK(linear_macs({3, 5}) == 15);
  CHECK_THROWS_AS(linear_macs({0, 5}), std::invalid_argument);
  CHECK_THROWS_AS(linear_macs({3, -1}), std::invalid_argument);

  // 2->4 then 4->2: 8 + 8.
  BlockShape b;
  b.linears = {{2, 4}, {4, 2}};
  CHECK(block_macs(b) == 16);
  CHECK(block_macs(BlockShape{}) == 0);
}

TEST_CASE("profiled costs for the full-width configuration") {
  DenoiserConfig cfg;
  cfg.n_layers = 12;
  cfg.hidden_width = 128;
  cfg.data_dim = 2;
  CostModel cm = profile_costs(cfg);

  REQUIRE(cm.layer_costs.size() == 12);
  for (int l = 0; l < 6; ++l) {
    CHECK(cm.layer_costs[static_cast<size_t>(l)] == 32768);  // 128*128*2
  }
  for (int l = 6; l < 12; ++l) {
    CHECK(cm.layer_costs[static_cast<size_t>(l)] == 49152);  // (256+128)*128
  }
  CHECK(cm.fixed_cost == 512);  // 2*128 in, 128*2 out
  CHECK(cm.dense_total() == 492032);

  Eigen::VectorXd cd = cm.costs_as_double();
  CHECK(cd.size() == 12);
  CHECK(cd[0] == 32768.0);
  CHECK(cd[11] == 49152.0);
  CHECK(cd.sum() == static_cast<double>(cm.dense_total() - cm.fixed_cost));
}

TEST_CASE("profiled costs scale with the architecture") {
  DenoiserConfig cfg;
  cfg.n_layers = 4;
  cfg.hidden_width = 8;
  cfg.data_dim = 2;
  CostModel cm = profile_costs(cfg);
  CHECK(cm.layer_costs == std::vector<int64_t>({128, 128, 192, 192}));
  CHECK(cm.fixed_cost == 32);
  CHECK(cm.dense_total() == 32 + 2 * 128 + 2 * 192);

  cfg.hidden_width = 7;
  CHECK_THROWS_AS(profile_costs(cfg), std::invalid_argument);
}

TEST_CASE("masked and scheduled totals") {
  CostModel cm;
  cm.layer_costs = {1, 2, 3, 4};
  cm.fixed_cost = 10;
  CHECK(masked_macs(cm, {1, 0, 1, 0}) == 14);
  CHECK(masked_macs(cm, {1, 1, 1, 1}) == cm.dense_total());
  CHECK(masked_macs(cm, {0, 0, 0, 0}) == 10);
  CHECK_THROWS_AS(masked_macs(cm, {1, 0, 1}), std::invalid_argument);

  MaskSet ms;
  ms.expert_masks.resize(2, 4);
  ms.expert_masks << 1, 0, 1, 0,
                     1, 1, 1, 1;
  ms.routing_table = {0, 1, 0};
  CHECK(schedule_macs(cm, ms, {0, 1}) == 14 + 20);
  CHECK(schedule_macs(cm, ms, {2, 2}) == 28);  // repeat visits recount
  CHECK(schedule_macs(cm, ms, {}) == 0);
  CHECK_THROWS_AS(schedule_macs(cm, ms, {3}), std::invalid_argument);
}

TEST_CASE("speedup ratio") {
  CHECK(speedup(38.04, 9.89) ==
        doctest::Approx(3.846309403437816).epsilon(1e-12));
  CHECK(speedup(7.0, 7.0) == 1.0);
  CHECK_THROWS_AS(speedup(1.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(speedup(-1.0, 2.0), std::invalid_argument);
}

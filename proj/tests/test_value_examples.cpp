#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support/value_examples.hpp"

TEST_CASE("every tabulated example holds") {
  for (const auto& r : testutil::run_value_examples()) {
    INFO(r.name, ": ", r.detail);
    CHECK(r.pass);
  }
}

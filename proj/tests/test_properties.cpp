#include <catch2/catch_amalgamated.hpp>

#include "cw/gradcheck.hpp"
#include "property_suites.hpp"

TEST_CASE("randomized property suites") {
    for (const auto& suite : cwtest::run_property_suites()) {
        INFO(suite.name << ": " << suite.failures << " failures over " << suite.cases
                        << " cases" << (suite.detail.empty() ? "" : " (first: " + suite.detail + ")"));
        CHECK(suite.ok());
    }
}

TEST_CASE("property: per-primitive gradients across 100 random instances") {
    for (std::uint64_t seed = 0; seed < 100; ++seed)
        for (const auto& c : cw::gradcheck_primitives(seed)) {
            INFO(c.name << " at seed " << seed);
            REQUIRE(c.error <= c.tolerance);
        }
}

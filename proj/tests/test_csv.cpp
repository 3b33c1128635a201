#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>

#include "kinnet/csv.hpp"

using namespace kinnet;

TEST_CASE("numeric tables round-trip through text exactly", "[csv]") {
  NumericTable t;
  t.columns = {"t", "y1", "y2"};
  t.rows = {{0.0, 1.0, 1.0 / 3.0}, {1e-5, 0.99999, 3.3e-300}, {1e5, 0.2, -7.125}};
  const std::string text = write_numeric_csv(t);
  const NumericTable back = parse_numeric_csv(text);
  REQUIRE(back.columns == t.columns);
  REQUIRE(back.rows.size() == t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    for (std::size_t c = 0; c < t.rows[r].size(); ++c) CHECK(back.rows[r][c] == t.rows[r][c]);
}

TEST_CASE("comment and blank lines are skipped", "[csv]") {
  const NumericTable t = parse_numeric_csv(
      "# produced by the trajectory writer\n"
      "\n"
      "t,y\n"
      "0,1\n"
      "\n"
      "2, 0.5 \n"
      "# accepted_steps=12\n"
      "# rhs_evaluations=40\n");
  REQUIRE(t.columns == std::vector<std::string>{"t", "y"});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[1][0] == 2.0);
  CHECK(t.rows[1][1] == 0.5);
}

TEST_CASE("malformed tables are rejected with the offending line", "[csv]") {
  CHECK_THROWS_AS(parse_numeric_csv(""), parse_error);
  CHECK_THROWS_AS(parse_numeric_csv("# only comments\n"), parse_error);
  CHECK_THROWS_AS(parse_numeric_csv("t,,y\n0,1,2\n"), parse_error);
  CHECK_THROWS_AS(parse_numeric_csv("t,y\n0,1,2\n"), parse_error);
  CHECK_THROWS_AS(parse_numeric_csv("t,y\n0,oops\n"), parse_error);
  try {
    parse_numeric_csv("t,y\n0,1\n2\n");
    FAIL("short row accepted");
  } catch (const parse_error& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("columns are found by name", "[csv]") {
  NumericTable t;
  t.columns = {"t", "A", "B"};
  t.rows = {{0, 1, 2}, {1, 3, 4}};
  CHECK(t.has_column("B"));
  CHECK_FALSE(t.has_column("C"));
  CHECK(t.column("A") == 1);
  CHECK_THROWS_AS(t.column("C"), config_error);
  CHECK(t.column_values(2) == std::vector<double>{2, 4});
  CHECK_THROWS_AS(t.column_values(3), dimension_error);
}

TEST_CASE("ragged tables cannot be written", "[csv]") {
  NumericTable t;
  t.columns = {"a", "b"};
  t.rows = {{1, 2}, {3}};
  CHECK_THROWS_AS(write_numeric_csv(t), dimension_error);
}

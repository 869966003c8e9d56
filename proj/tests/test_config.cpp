#include <doctest.h>

#include <cmath>

#include "effort/config.hpp"
#include "effort/errors.hpp"
#include "effort/experiments.hpp"

using namespace effort;

TEST_CASE("parse sections, comments and lists") {
  const auto c = Config::parse(
      "# leading comment\n"
      "[dynamics]\n"
      "  dt = 0.05   # trailing\n"
      "steps=400\n"
      "\n"
      "[task]\n"
      "mu1 = 3, -2\n"
      "bias = yes\n");
  CHECK(c.get_double("dynamics", "dt") == 0.05);
  CHECK(c.get_int("dynamics", "steps") == 400);
  CHECK(c.get_list("task", "mu1") == std::vector<double>{3.0, -2.0});
  CHECK(c.get_bool("task", "bias"));
  CHECK_FALSE(c.has("task", "p"));
  CHECK_THROWS_AS(c.get("task", "p"), ConfigError);
}

TEST_CASE("syntax errors name the line") {
  try {
    Config::parse("[a]\nx = 1\nbroken line\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(Config::parse("x = 1\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[a]\nx = 1\nx = 2\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[a b]\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[a\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[a]\nbad key = 1\n"), ConfigError);
}

TEST_CASE("typed getters reject junk") {
  const auto c = Config::parse("[s]\nn = 1.5\nb = maybe\nd = 2x\nl = 1,,2\n");
  CHECK_THROWS_AS(c.get_int("s", "n"), ConfigError);
  CHECK_THROWS_AS(c.get_bool("s", "b"), ConfigError);
  CHECK_THROWS_AS(c.get_double("s", "d"), ConfigError);
  CHECK_THROWS_AS(c.get_list("s", "l"), ConfigError);
  CHECK(std::isinf(parse_double("-inf", "x")));
}

TEST_CASE("serialize then parse gives the same config") {
  Config c;
  c.set("zeta", "a", "1, 2, 3");
  c.set("alpha", "beta", 0.1);
  c.set("alpha", "gamma", 1.0 / 3.0);
  c.set("alpha", "hi", INFINITY);
  const auto back = Config::parse(c.serialize());
  CHECK(back == c);
  CHECK(back.get_double("alpha", "gamma") == 1.0 / 3.0);
  CHECK(std::isinf(back.get_double("alpha", "hi")));
  CHECK(c.serialize().find("[alpha]") < c.serialize().find("[zeta]"));
  for (Scenario s : all_scenarios()) CHECK(Config::parse(preset(s).serialize()) == preset(s));
}

TEST_CASE("set and merge") {
  Config a = Config::parse("[x]\nk = 1\nj = 2\n");
  const Config b = Config::parse("[x]\nk = 5\n[y]\nz = 0\n");
  a.merge(b);
  CHECK(a.get("x", "k") == "5");
  CHECK(a.get("x", "j") == "2");
  CHECK(a.get("y", "z") == "0");
  a.set_path("y.z", "7");
  CHECK(a.get_int("y", "z") == 7);
  CHECK_THROWS_AS(a.set_path("nodot", "1"), ConfigError);
  CHECK_THROWS_AS(a.set("x", "k", "a # b"), ConfigError);
}

TEST_CASE("run config overlays the preset") {
  Config user = Config::parse("[scenario]\nname = task_switch\n[dynamics]\nhidden = 5\n");
  const RunConfig rc = make_run_config(user);
  CHECK(rc.scenario == Scenario::task_switch);
  CHECK(rc.hidden == 5);
  CHECK(rc.switch_period == 140);
  CHECK(rc.task.mu1 == std::vector<double>{3.0, -2.0});
  CHECK(rc.config.get("dynamics", "hidden") == "5");

  user.set("dynamics", "typo", "1");
  CHECK_THROWS_AS(make_run_config(user), ConfigError);
  CHECK_THROWS_AS(make_run_config(Config::parse("[scenario]\nname = nope\n")), ConfigError);
  CHECK_THROWS_AS(make_run_config(Config::parse("[dynamics]\nhidden = 2\n")), ConfigError);
  CHECK_THROWS_AS(make_run_config(Config::parse("[scenario]\nname = lr_bilevel\n[dynamics]\nsteps = 0\n")),
                  ConfigError);
  CHECK_THROWS_AS(make_run_config(Config::parse("[scenario]\nname = lr_bilevel\n[optimizer]\nsegment = 7\n")),
                  ConfigError);
  CHECK_THROWS_AS(make_run_config(Config::parse("[scenario]\nname = lr_bilevel\n[value]\ncost = fancy\n")),
                  ConfigError);
}

#include <gtest/gtest.h>

#include <filesystem>

#include "ghmnet/experiment.hpp"

using namespace ghmnet;
namespace ex = ghmnet::experiment;

namespace {

ErrorCode code_of(const std::string& text, const std::string& task) {
  try {
    ex::parse_config(text, task);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "config was accepted";
  return ErrorCode::io;
}

const char* kApprox = R"(
seed: 5
model: {m: [2, 2], S: 2, K: 4, root: uniform}
approx-sweep: {arch: convnet, delta: [1.0, 0.5]}
)";

}  // namespace

TEST(Config, DefaultsAreFilledIn) {
  auto c = ex::parse_config("model: {m: [3]}\nbp: {}\n", "bp");
  EXPECT_EQ(c.seed, 0u);
  EXPECT_EQ(c.model.S, 2);
  EXPECT_EQ(std::get<ex::BpTask>(c.spec).count, 10);
  // an empty section is allowed
  EXPECT_NO_THROW(ex::parse_config("model: {m: [3]}\nbp:\n", "bp"));
}

TEST(Config, ScalarPromotesToList) {
  auto c = ex::parse_config("model: {m: 4}\napprox-sweep: {delta: 0.5}\n", "approx-sweep");
  EXPECT_EQ(c.model.m, std::vector<int>{4});
  EXPECT_EQ(std::get<ex::ApproxSweepTask>(c.spec).delta, std::vector<double>{0.5});
}

TEST(Config, ErrorsAreClassified) {
  EXPECT_EQ(code_of("model: {m: [2\n", "bp"), ErrorCode::parse);
  EXPECT_EQ(code_of("- 1\n- 2\n", "bp"), ErrorCode::parse);
  EXPECT_EQ(code_of("model: {m: [2]}\nbp: {count: many}\n", "bp"), ErrorCode::parse);
  EXPECT_EQ(code_of("model: {m: [2]}\nbp: {count: 0}\n", "bp"), ErrorCode::configuration);
  EXPECT_EQ(code_of("model: {m: [2]}\nbp: {colour: 1}\n", "bp"), ErrorCode::configuration);
  EXPECT_EQ(code_of("model: {m: [2]}\nbp: {}\nsample: {}\n", "bp"), ErrorCode::configuration);
  EXPECT_EQ(code_of("model: {m: [2]}\nbp: {}\n", "sample"), ErrorCode::configuration);
  EXPECT_EQ(code_of("bp: {}\n", "bp"), ErrorCode::configuration);
  EXPECT_EQ(code_of("model: {m: [2], S: 3, K: 2}\nbp: {}\n", "bp"), ErrorCode::configuration);
  EXPECT_EQ(code_of("model: {m: [2], psi: file}\nbp: {}\n", "bp"), ErrorCode::configuration);
  EXPECT_EQ(code_of("model: {m: [0]}\nbp: {}\n", "bp"), ErrorCode::configuration);
}

TEST(Config, ExitCodes) {
  EXPECT_EQ(ex::exit_code(ErrorCode::parse), 2);
  EXPECT_EQ(ex::exit_code(ErrorCode::configuration), 3);
  EXPECT_EQ(ex::exit_code(ErrorCode::invalid_params), 3);
  EXPECT_EQ(ex::exit_code(ErrorCode::numeric), 4);
  EXPECT_EQ(ex::exit_code(ErrorCode::divergence), 4);
  EXPECT_EQ(ex::exit_code(ErrorCode::enumeration_limit), 5);
}

TEST(Config, ResolvedConfigParsesToSameRun) {
  auto c = ex::parse_config(kApprox, "approx-sweep");
  auto again = ex::parse_config(ex::resolved_yaml(c), "approx-sweep");
  EXPECT_EQ(ex::resolved_yaml(c), ex::resolved_yaml(again));
  EXPECT_EQ(ex::run(c).results, ex::run(again).results);
}

TEST(Run, ApproxSweepWithinDelta) {
  auto c = ex::parse_config(kApprox, "approx-sweep");
  auto out = ex::run(c).results;
  std::istringstream in(out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "delta,D,native_width,max_error");
  int rows = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    ASSERT_EQ(cells.size(), 4u);
    EXPECT_LE(parse_double(cells[3]), parse_double(cells[0]));
    ++rows;
  }
  EXPECT_EQ(rows, 2);
}

TEST(Run, MpCheckBelowTolerance) {
  auto c = ex::parse_config("seed: 3\nmodel: {m: [2, 2], S: 3, K: 5}\nmp-check: {instances: 10, trials: 2}\n",
                            "mp-check");
  std::istringstream in(ex::run(c).results);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) EXPECT_LT(parse_double(line.substr(line.rfind(',') + 1)), 1e-10);
}

TEST(Run, SameSeedSameBytes) {
  const std::string text = "seed: 9\nmodel: {m: [2, 2], S: 2, K: 4}\n";
  for (const auto& [task, body] : std::vector<std::pair<std::string, std::string>>{
           {"sample", "{count: 5, sigma: 1}"},
           {"bp", "{count: 5}"},
           {"train", "{n: [50], iterations: 3, eval_n: 100, D: 4}"},
           {"diffuse", "{T: [2], N: [10], samples: 50}"}}) {
    auto c = ex::parse_config(text + task + ": " + body + "\n", task);
    EXPECT_EQ(ex::run(c).results, ex::run(c).results) << task;
    auto other = c;
    other.seed = 10;
    EXPECT_NE(ex::run(c).results, ex::run(other).results) << task;
  }
}

TEST(Run, TableFileModel) {
  auto dir = std::filesystem::temp_directory_path() / "ghmnet_table_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "tables.txt");
    out << "S 2\nroot 0.5 0.5\ntable 1 1\n0.7 0.3\n0.4 0.6\n";
  }
  auto c = ex::parse_config("model: {m: [1], K: 4, psi: file, psi_file: tables.txt}\nbp: {count: 2}\n", "bp", dir);
  auto p = ex::make_model(c, 0);
  EXPECT_DOUBLE_EQ(p.table(1, 0)(0, 0), 0.7);
  EXPECT_NO_THROW(ex::run(c));
  auto missing = ex::parse_config("model: {m: [1], psi: file, psi_file: nope.txt}\nbp: {}\n", "bp", dir);
  EXPECT_THROW(ex::make_model(missing, 0), Error);
  std::filesystem::remove_all(dir);
}

TEST(Run, OutputsWritten) {
  auto dir = std::filesystem::temp_directory_path() / "ghmnet_output_test";
  std::filesystem::remove_all(dir);
  auto c = ex::parse_config("model: {m: [2]}\nsample: {count: 3}\n", "sample");
  c.output = dir.string();
  ex::write_outputs(c, ex::run(c), "inline", 0.0);
  for (const char* f : {"results.csv", "config.resolved", "manifest", "params.txt"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  std::filesystem::remove_all(dir);
}

// Copyright 2026 The trainwatch Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sstream>

#include "test_support.hpp"
#include "trainwatch/cli.hpp"
#include "trainwatch/fixtures.hpp"

using namespace trainwatch;
using testsupport::TempDir;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string dir_digest(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) {
    all += std::filesystem::relative(f, dir).generic_string() + "\n" + testsupport::read_bytes(f);
  }
  return all;
}

const std::string kData = TRAINWATCH_DATA_DIR;

}  // namespace

TEST_CASE("usage errors exit 1 with help text") {
  auto r = cli({"frobnicate"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(r.out.empty());

  r = cli({});
  CHECK(r.code == kExitUsage);

  r = cli({"plan", "only-one-arg"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("inventory") != std::string::npos);

  r = cli({"--metric", "median", "scan", "x"});
  CHECK(r.code == kExitUsage);

  r = cli({"--help"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("scan") != std::string::npos);
}

TEST_CASE("data errors exit 2") {
  TempDir dir("cli");
  auto r = cli({"scan", (dir / "missing").string()});
  CHECK(r.code == kExitData);
  CHECK(r.err.find("error:") != std::string::npos);
  testsupport::write_bytes(dir / "bad.csv", "tokens_b,value\n1,NaN\n");
  r = cli({"loss", (dir / "bad.csv").string()});
  CHECK(r.code == kExitData);
  CHECK(r.err.find("row 2") != std::string::npos);
}

TEST_CASE("fixtures, scan and frechet") {
  TempDir dir("cli");
  auto r = cli({"--out", dir.path().string(), "fixtures", kData + "/fixtures_default.json"});
  REQUIRE(r.code == kExitOk);
  const auto run = (dir / "run").string();
  CHECK(discover_run(run).size() == 6);

  r = cli({"scan", run});
  REQUIRE(r.code == kExitOk);
  auto j = nlohmann::json::parse(r.out);
  CHECK(j["checkpoints"].size() == 6);
  CHECK(j["checkpoints"][0]["per_layer"].size() == 36);

  // embeddings and head are unmapped: fatal only under --strict
  r = cli({"--strict", "scan", run});
  CHECK(r.code == kExitData);
  CHECK(r.err.find("StrictUnmapped") != std::string::npos);

  r = cli({"frechet", run});
  REQUIRE(r.code == kExitOk);
  j = nlohmann::json::parse(r.out);
  CHECK(j["series"].size() == 9);
  CHECK(j["series"][0]["points"].size() == 5);
  CHECK(j["convergence"].size() == 9);

  const auto jobs4 = cli({"--jobs", "4", "frechet", run});
  CHECK(jobs4.out == r.out);

  r = cli({"--out", (dir / "fr").string(), "--frechet-mode", "planar", "--layer-scale", "0.001", "frechet", run});
  REQUIRE(r.code == kExitOk);
  CHECK(std::filesystem::exists(dir / "fr" / "distance_series.csv"));
  CHECK(std::filesystem::exists(dir / "fr" / "convergence.json"));
}

TEST_CASE("discovery orders by tokens, not file names") {
  TempDir dir("cli");
  RunSpec spec;
  spec.tokens_schedule_b = {10, 20};
  spec.stages = {"a", "b"};
  const auto files = gen_converging_run(spec, dir.path());
  // swap the sidecars so file-name order disagrees with token order
  write_sidecar(files[0].sidecar, {"late", 99, "b"});
  write_sidecar(files[1].sidecar, {"early", 5, "a"});
  const auto run = discover_run(dir.path());
  CHECK(run[0].meta.checkpoint_id == "early");
  CHECK(run[0].container.filename() == "ckpt_001.safetensors");

  std::filesystem::remove(files[1].sidecar);
  CHECK(testsupport::error_code([&] { discover_run(dir.path()); }) == ErrorCode::IoError);
}

TEST_CASE("loss subcommand and config precedence") {
  TempDir dir("cli");
  REQUIRE(cli({"--out", dir.path().string(), "fixtures", "default"}).code == kExitOk);
  const auto spikes = (dir / "loss" / "loss_spikes.jsonl").string();

  auto r = cli({"loss", spikes});
  REQUIRE(r.code == kExitOk);
  auto j = nlohmann::json::parse(r.out);
  CHECK(j["spikes"].size() == 2);
  CHECK(j["spike_params"]["window"] == 50);

  testsupport::write_bytes(dir / "cfg.json", R"({"window": 60, "threshold": 7.5})");
  r = cli({"--config", (dir / "cfg.json").string(), "loss", spikes});
  j = nlohmann::json::parse(r.out);
  CHECK(j["spike_params"]["window"] == 60);
  CHECK(j["spike_params"]["threshold"] == 7.5);

  r = cli({"--config", (dir / "cfg.json").string(), "--window", "70", "loss", spikes});
  j = nlohmann::json::parse(r.out);
  CHECK(j["spike_params"]["window"] == 70);
  CHECK(j["spike_params"]["threshold"] == 7.5);

  testsupport::write_bytes(dir / "bad_cfg.json", R"({"window": "wide"})");
  CHECK(cli({"--config", (dir / "bad_cfg.json").string(), "loss", spikes}).code == kExitData);

  r = cli({"loss", spikes, "--boundaries", kData + "/boundaries_example.json"});
  REQUIRE(r.code == kExitOk);
  CHECK(nlohmann::json::parse(r.out)["stages"].size() == 3);

  r = cli({"--out", (dir / "events").string(), "loss", spikes});
  REQUIRE(r.code == kExitOk);
  CHECK(testsupport::read_bytes(dir / "events" / "spikes.csv").rfind("index,tokens_b", 0) == 0);
}

TEST_CASE("plan writes a manifest; diagnostics go to stderr") {
  auto r = cli({"plan", kData + "/recipes/v3.json", kData + "/inventory_example.json"});
  REQUIRE(r.code == kExitOk);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["stages"][0]["domain_weights"]["Web"].get<double>() == doctest::Approx(0.82).epsilon(1e-12));
  double web_tokens = 0;
  for (const auto& s : j["stages"][0]["sources"]) {
    if (s["domain"] == "Web") web_tokens += s["target_tokens_b"].get<double>();
  }
  CHECK(web_tokens == doctest::Approx(820).epsilon(1e-12));

  TempDir dir("cli");
  testsupport::write_bytes(dir / "inv.json", R"([{"name":"w","domain":"Web","language":"en","available_tokens_b":100},
    {"name":"z","domain":"Web","language":"zh","available_tokens_b":100}])");
  testsupport::write_bytes(dir / "r.json", R"({"stages":[{"stage":"s","budget_tokens_b":400,"proportions":{"Web":1}}]})");
  r = cli({"plan", (dir / "r.json").string(), (dir / "inv.json").string()});
  CHECK(r.code == kExitOk);
  CHECK(r.err.find("lang_ratio_out_of_band") != std::string::npos);
  CHECK(r.err.find("epoch_cap_exceeded") == std::string::npos);
  CHECK(nlohmann::json::parse(r.out)["stages"][0]["diagnostics"].size() == 1);
}

TEST_CASE("report bundle is reproducible") {
  TempDir dir("cli");
  REQUIRE(cli({"--out", dir.path().string(), "fixtures", "default"}).code == kExitOk);
  const std::vector<std::string> inputs = {(dir / "run").string(), (dir / "loss" / "loss_plateau.jsonl").string()};
  auto args = [&](const std::string& out) {
    std::vector<std::string> a = {"--out", out, "report"};
    a.insert(a.end(), inputs.begin(), inputs.end());
    a.push_back("--boundaries");
    a.push_back(kData + "/boundaries_example.json");
    return a;
  };
  auto r1 = cli(args((dir / "r1").string()));
  auto r2 = cli(args((dir / "r2").string()));
  REQUIRE(r1.code == kExitOk);
  REQUIRE(r2.code == kExitOk);
  CHECK(dir_digest(dir / "r1") == dir_digest(dir / "r2"));
  const auto index = nlohmann::json::parse(testsupport::read_bytes(dir / "r1" / "index.json"));
  CHECK(index["files"].size() == 14);
  CHECK(index["inputs"].size() == 14);  // 12 run files, the series and the boundaries
  CHECK(cli({"report", inputs[0]}).code == kExitData);  // no --out
}

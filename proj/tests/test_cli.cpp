#include <gtest/gtest.h>

#include "hrf/scenario.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <sstream>

using namespace hrf;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("hrf_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome lab(const std::string& args) {
  const fs::path out = work_dir() / "stdout.txt";
  const fs::path err = work_dir() / "stderr.txt";
  const std::string cmd = std::string(HRF_LAB_EXE) + " --preset-dir " + HRF_PRESET_DIR + " " + args + " >" +
                          out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.out = slurp(out);
  o.err = slurp(err);
  return o;
}

json preset_json(const std::string& name) { return read_json_file(fs::path(HRF_PRESET_DIR) / (name + ".json")); }

std::vector<std::string> csv_column(const std::string& text, const std::string& name) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  std::stringstream hs(line);
  for (std::string c; std::getline(hs, c, ',');) header.push_back(c);
  const auto idx = static_cast<std::size_t>(std::find(header.begin(), header.end(), name) - header.begin());
  std::vector<std::string> out;
  while (std::getline(in, line)) {
    std::stringstream ls(line);
    std::string c;
    for (std::size_t i = 0; i <= idx && std::getline(ls, c, ','); ++i) {
    }
    out.push_back(c);
  }
  return out;
}

class CleanupWorkDir : public ::testing::Environment {
 public:
  void TearDown() override { fs::remove_all(work_dir()); }
};

const auto* const cleanup = ::testing::AddGlobalTestEnvironment(new CleanupWorkDir);

}  // namespace

TEST(Presets, RequiredNamesPresent) {
  const auto names = list_presets(HRF_PRESET_DIR);
  EXPECT_GE(names.size(), 5u);
  for (const char* n : {"round_s3", "berger_s3", "generic_s3", "s2_x_s1", "flat_t3", "berger"})
    EXPECT_NE(std::find(names.begin(), names.end(), n), names.end()) << n;
}

TEST(Presets, AllParseAndValidate) {
  for (const auto& n : list_presets(HRF_PRESET_DIR)) {
    const auto sc = load_scenario(resolve_scenario(n, HRF_PRESET_DIR));
    EXPECT_EQ(sc.name, n);
    EXPECT_TRUE(validate_scenario(sc).valid) << n;
  }
}

TEST(Presets, BergerAliasMatchesBergerS3) {
  json a = preset_json("berger");
  json b = preset_json("berger_s3");
  for (json* j : {&a, &b}) {
    j->erase("name");
    j->erase("outputs");
  }
  EXPECT_EQ(a, b);
}

TEST(Scenario, ShapeAndOrderingErrors) {
  const json base = preset_json("round_s3");
  auto expect_config_error = [&](const std::function<void(json&)>& edit) {
    json j = base;
    edit(j);
    EXPECT_THROW(parse_scenario(j), ConfigError) << j.dump();
  };
  expect_config_error([](json& j) { j["blowdown"]["taus"] = {1e3, 1e2, 1e4}; });
  expect_config_error([](json& j) { j["blowdown"]["taus"] = {1e2, 1e3}; });
  expect_config_error([](json& j) { j["blowdown"]["t_eval"] = 0.5; });
  expect_config_error([](json& j) { j["initial_metric"] = {{1, 0}, {0, 1}}; });
  expect_config_error([](json& j) { j["algebra"]["structure"] = {{1, 0, 2, 1.0}}; });
  expect_config_error([](json& j) { j["algebra"]["structure"] = {{0, 1, 3, 1.0}}; });
  expect_config_error([](json& j) { j["flow"].erase("t_backward"); });
  expect_config_error([](json& j) { j["flow"]["t_backward"] = -50.0; });
  expect_config_error([](json& j) { j["model"]["taus"] = {1e5}; });
  expect_config_error([](json& j) { j["model"]["order"] = 3; });
  expect_config_error([](json& j) { j["outputs"]["formats"] = {"xml"}; });
  expect_config_error([](json& j) { j.erase("algebra"); });
  EXPECT_NO_THROW(parse_scenario(base));
}

TEST(Scenario, IsotropyBlockCarriesHBasis) {
  json j = preset_json("s2_x_s1");
  j["isotropy"]["h_basis"] = j["algebra"]["h_basis"];
  j["algebra"].erase("h_basis");
  const auto sc = parse_scenario(j);
  ASSERT_EQ(sc.h_basis.size(), 1u);
  EXPECT_TRUE(validate_scenario(sc).valid);
}

TEST(Scenario, NonInvariantMetricFailsValidation) {
  json j = preset_json("s2_x_s1");
  j["initial_metric"] = {{2, 0, 0}, {0, 3, 0}, {0, 0, 1}};
  const auto v = validate_scenario(parse_scenario(j));
  EXPECT_FALSE(v.valid);
  EXPECT_GT(v.metric_invariance_defect, 1e-3);
}

TEST(Cli, NonJacobiExitsOneWithReport) {
  json j = preset_json("round_s3");
  // [e1,e2] = e2, [e2,e3] = e1 violates the Jacobi identity on (e1, e2, e3)
  j["algebra"]["structure"] = {{0, 1, 1, 1.0}, {1, 2, 0, 1.0}};
  const fs::path p = work_dir() / "nonjacobi.json";
  write_json(p, j);
  for (const char* sub : {"validate", "run"}) {
    std::string args = std::string(sub) + " " + p.string();
    if (std::string(sub) == "run") args += " -o " + (work_dir() / "nj").string();
    const auto o = lab(args);
    EXPECT_EQ(o.code, 1) << sub;
    const json rep = json::parse(o.err);
    EXPECT_FALSE(rep.at("valid").get<bool>());
    EXPECT_GT(rep.at("algebra").at("jacobi_defect").get<double>(), 0.5);
  }
}

TEST(Cli, MalformedScenarioExitsOne) {
  const fs::path p = work_dir() / "broken.json";
  write_text(p, "{\"algebra\": ");
  EXPECT_EQ(lab("run " + p.string()).code, 1);
  EXPECT_EQ(lab("run no_such_preset").code, 1);
}

TEST(Cli, RoundRun) {
  const fs::path out = work_dir() / "round";
  const auto o = lab("run round_s3 -o " + out.string());
  ASSERT_EQ(o.code, 0) << o.err;
  const json bd = read_json_file(out / "blowdown.json");
  EXPECT_EQ(bd.at("s").get<int>(), 0);
  const json rep = read_json_file(out / "report.json");
  EXPECT_EQ(rep["stages"]["flow"]["backward"]["asymptotics"]["verdict"], "noncollapsed");
  for (const auto& f : csv_column(slurp(out / "trajectory.csv"), "F")) EXPECT_NEAR(std::stod(f), 1.5, 1e-12);
}

TEST(Cli, BergerRunPasses) {
  const fs::path out = work_dir() / "berger";
  const auto o = lab("run berger -o " + out.string());
  ASSERT_EQ(o.code, 0) << o.err;
  const json cert = read_json_file(out / "certificate.json");
  EXPECT_TRUE(cert.at("pass").get<bool>());
  EXPECT_NEAR(cert.at("lambda").get<double>(), 0.5, 0.01);
  for (const char* f : {"trajectory.csv", "blowdown.json", "models.json", "model_0.json", "report.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const json dump = read_json_file(out / "model_0.json");
  EXPECT_EQ(dump.at("values").size(), 40u * 60u * 9u);
  EXPECT_EQ(dump.at("dim").get<int>(), 3);
}

TEST(Cli, GenericForwardRunReportsSingularity) {
  const fs::path out = work_dir() / "generic";
  const auto o = lab("run generic_s3 -o " + out.string());
  EXPECT_EQ(o.code, 3);
  const json rep = read_json_file(out / "report.json");
  EXPECT_EQ(rep.at("status"), "forward_singularity");
  EXPECT_TRUE(rep["stages"]["flow"]["forward"]["t_star"].is_number());
  EXPECT_TRUE(fs::exists(out / "trajectory_forward.csv"));
}

TEST(Cli, ProductRunIsDeterministic) {
  const fs::path a = work_dir() / "det_a";
  const fs::path b = work_dir() / "det_b";
  ASSERT_EQ(lab("run s2_x_s1 -o " + a.string()).code, 0);
  ASSERT_EQ(lab("run s2_x_s1 -o " + b.string()).code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path().filename();
    ++files;
  }
  EXPECT_GE(files, 6u);
}

TEST(Cli, ModelComparePrintsOneNumber) {
  const auto o = lab("model-compare s2_x_s1 -o " + (work_dir() / "mc").string());
  ASSERT_EQ(o.code, 0) << o.err;
  std::istringstream in(o.out);
  double v = -1.0;
  in >> v;
  EXPECT_FALSE(in.fail());
  std::string rest;
  in >> rest;
  EXPECT_TRUE(rest.empty());
  EXPECT_GE(v, 0.0);
  EXPECT_LE(v, 1e-6);
}

TEST(Cli, SmokeMatrix) {
  const std::vector<std::string> subs = {"validate", "flow", "blowdown", "soliton-verify", "model-compare", "run"};
  for (const auto& n : list_presets(HRF_PRESET_DIR)) {
    if (n == "berger") continue;  // same content as berger_s3
    const json p = preset_json(n);
    for (const auto& s : subs) {
      std::string args = s + " " + n;
      if (s != "validate") args += " -o " + (work_dir() / ("smoke_" + n)).string();
      const auto o = lab(args);
      const bool has_blowdown = p.contains("blowdown");
      int expected = 0;
      if (!has_blowdown && s != "validate" && s != "flow" && s != "run") expected = 1;
      else if (p["flow"].contains("t_forward") && s != "validate") expected = 3;
      EXPECT_EQ(o.code, expected) << n << " " << s << "\n" << o.err;
    }
  }
  EXPECT_EQ(lab("presets").code, 0);
  EXPECT_EQ(lab("presets --show flat_t3").code, 0);
  EXPECT_EQ(lab("--help").code, 0);
}

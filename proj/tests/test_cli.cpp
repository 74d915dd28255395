#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = BSHP_CLI_PATH;

int run(const std::string& args, const std::string& tag) {
  const std::string cmd = kCli + " " + args + " > cli_" + tag + ".out 2> cli_" +
                          tag + ".err";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  os << text;
}

// Small, fast baseline configuration shared by the CLI tests.
std::string base_config(const std::string& extra = "") {
  return "dataset = moons\n"
         "dataset_n = 96\n"
         "dataset_noise = 0.08\n"
         "net = mlp:2-4-2\n"
         "space = custom\n"
         "weight_bits = 2,4\n"
         "act_bits = 4\n"
         "epochs = 2\n"
         "batch_size = 32\n"
         "mc_samples = 4\n"
         "finetune_epochs = 2\n"
         "probe_epochs = 2\n"
         "seed = 7\n" +
         extra;
}

std::size_t data_rows(const std::string& csv_path) {
  std::ifstream is(csv_path);
  std::string line;
  std::size_t rows = 0;
  bool seen_header = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!seen_header) {
      seen_header = true;
      continue;
    }
    ++rows;
  }
  return rows;
}

}  // namespace

TEST_CASE("search: valid config exits 0 and writes a valid policy file") {
  write_file("cfg_ok.cfg", base_config("out = run_ok\n"));
  CHECK(run("search --config cfg_ok.cfg", "ok") == 0);
  REQUIRE(fs::exists("run_ok/policy.json"));
  const json policy = json::parse(slurp("run_ok/policy.json"));
  REQUIRE(policy.contains("layers"));
  CHECK(policy["layers"].size() == 2);
  for (const auto& layer : policy["layers"]) {
    CHECK(layer.contains("index"));
    const int wb = layer["weight_bits"].get<int>();
    CHECK((wb == 2 || wb == 4));
    CHECK(layer["act_bits"].get<int>() == 4);
  }
  CHECK(policy["seed"].get<std::uint64_t>() == 7);
  CHECK(policy.contains("bops"));
  CHECK(policy.contains("search_space"));
  CHECK(policy.contains("config"));  // provenance
  CHECK(fs::exists("run_ok/trajectory.csv"));
  CHECK(fs::exists("run_ok/checkpoint.bshp"));
  CHECK(fs::exists("run_ok/config.resolved"));
}

TEST_CASE("search: unknown config key exits 2 and names the key") {
  write_file("cfg_bad.cfg", base_config("bogus_key = 1\n"));
  CHECK(run("search --config cfg_bad.cfg", "bad") == 2);
  CHECK(slurp("cli_bad.err").find("bogus_key") != std::string::npos);
}

TEST_CASE("search: identical config and seed give byte-identical artifacts") {
  write_file("cfg_det.cfg", base_config());
  CHECK(run("search --config cfg_det.cfg --out run_det_a", "det_a") == 0);
  CHECK(run("search --config cfg_det.cfg --out run_det_b", "det_b") == 0);
  // out dirs differ, so provenance comments differ; the data must not
  const auto data_lines = [](const std::string& path) {
    std::ifstream is(path);
    std::string line, out;
    while (std::getline(is, line)) {
      if (!line.empty() && line[0] != '#') out += line + "\n";
    }
    return out;
  };
  CHECK(data_lines("run_det_a/trajectory.csv") ==
        data_lines("run_det_b/trajectory.csv"));
  const json pa = json::parse(slurp("run_det_a/policy.json"));
  const json pb = json::parse(slurp("run_det_b/policy.json"));
  CHECK(pa["layers"] == pb["layers"]);
  CHECK(pa["bops"] == pb["bops"]);

  // byte-identical when the configured out dir matches too
  write_file("cfg_det2.cfg", base_config("out = run_det_c\n"));
  CHECK(run("search --config cfg_det2.cfg", "det_c1") == 0);
  const std::string first = slurp("run_det_c/policy.json");
  const std::string first_traj = slurp("run_det_c/trajectory.csv");
  CHECK(run("search --config cfg_det2.cfg", "det_c2") == 0);
  CHECK(slurp("run_det_c/policy.json") == first);
  CHECK(slurp("run_det_c/trajectory.csv") == first_traj);
}

TEST_CASE("flags beat environment beats file") {
  write_file("cfg_env.cfg", base_config("out = run_env\n"));
  const std::string cmd = "BSHP_SEED=99 " + kCli +
                          " search --config cfg_env.cfg --seed 11 "
                          "> cli_env.out 2> cli_env.err";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  CHECK(WEXITSTATUS(status) == 0);
  CHECK(slurp("run_env/config.resolved").find("seed = 11") != std::string::npos);

  const std::string cmd2 = "BSHP_SEED=99 " + kCli +
                           " search --config cfg_env.cfg "
                           "> cli_env2.out 2> cli_env2.err";
  REQUIRE(std::system(cmd2.c_str()) != -1);
  CHECK(slurp("run_env/config.resolved").find("seed = 99") != std::string::npos);
}

TEST_CASE("eval: round-trips a search checkpoint and flags corruption") {
  write_file("cfg_eval.cfg", base_config("out = run_eval\n"));
  REQUIRE(run("search --config cfg_eval.cfg", "eval_search") == 0);

  CHECK(run("eval --config cfg_eval.cfg --checkpoint run_eval/checkpoint.bshp"
            " --policy run_eval/policy.json",
            "eval_ok") == 0);
  const json metrics = json::parse(slurp("cli_eval_ok.out"));
  CHECK(metrics.contains("val_accuracy"));
  CHECK(metrics.contains("bops"));

  SUBCASE("uniform 4/4 policy reports exactly 64x compression") {
    write_file("policy_44.json",
               R"({"layers": [{"index":0,"weight_bits":4,"act_bits":4},)"
               R"({"index":1,"weight_bits":4,"act_bits":4}]})");
    CHECK(run("eval --config cfg_eval.cfg --checkpoint "
              "run_eval/checkpoint.bshp --policy policy_44.json",
              "eval_44") == 0);
    const json m = json::parse(slurp("cli_eval_44.out"));
    CHECK(m["compression_ratio"].get<double>() == doctest::Approx(64.0));
  }

  SUBCASE("corrupted checkpoint magic exits 3") {
    std::string bytes = slurp("run_eval/checkpoint.bshp");
    bytes[0] = 'X';
    std::ofstream os("corrupt.bshp", std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    os.close();
    CHECK(run("eval --config cfg_eval.cfg --checkpoint corrupt.bshp"
              " --policy run_eval/policy.json",
              "eval_corrupt") == 3);
  }

  SUBCASE("policy/network layer mismatch exits 3") {
    write_file("policy_short.json",
               R"({"layers": [{"index":0,"weight_bits":4,"act_bits":4}]})");
    CHECK(run("eval --config cfg_eval.cfg --checkpoint "
              "run_eval/checkpoint.bshp --policy policy_short.json",
              "eval_mismatch") == 3);
  }
}

TEST_CASE("finetune emits metrics from a completed run") {
  write_file("cfg_ft.cfg", base_config("out = run_ft\n"));
  REQUIRE(run("search --config cfg_ft.cfg", "ft_search") == 0);
  CHECK(run("finetune --config cfg_ft.cfg --run run_ft --out run_ft_out",
            "ft") == 0);
  const json m = json::parse(slurp("run_ft_out/finetune_metrics.json"));
  CHECK(m.contains("val_accuracy"));
  CHECK(m.contains("compression_ratio"));
  CHECK(fs::exists("run_ft_out/finetuned.bshp"));
}

TEST_CASE("shapley-exact: small game satisfies efficiency, large one refuses") {
  write_file("cfg_exact.cfg",
             "dataset = gaussians\n"
             "dataset_n = 64\n"
             "net = mlp:2-2\n"
             "space = custom\n"
             "weight_bits = 2,4\n"
             "act_bits = 4\n"
             "epochs = 1\n"
             "mc_samples = 64\n"
             "out = run_exact\n");
  CHECK(run("shapley-exact --config cfg_exact.cfg", "exact") == 0);
  const json j = json::parse(slurp("cli_exact.out"));
  CHECK(j["players"].get<int>() == 3);
  CHECK(j["sum_psi"].get<double>() ==
        doctest::Approx(j["v_full_minus_v_empty"].get<double>()).epsilon(1e-9));
  CHECK(fs::exists("run_exact/shapley_exact.csv"));
  CHECK(data_rows("run_exact/shapley_exact.csv") == 3);

  write_file("cfg_too_big.cfg",
             "dataset = gaussians\n"
             "dataset_n = 64\n"
             "net = mlp:2-4-4-2\n"
             "space = s1_table\n"
             "out = run_too_big\n");
  CHECK(run("shapley-exact --config cfg_too_big.cfg", "exact_big") == 2);
  CHECK(slurp("cli_exact_big.err").find("Monte-Carlo") != std::string::npos);
}

TEST_CASE("shapley-exact: M=2000 estimate tracks the 6-player exact table") {
  write_file("cfg_exact6.cfg",
             "dataset = moons\n"
             "dataset_n = 256\n"
             "net = mlp:2-2\n"
             "space = custom\n"
             "weight_bits = 2,4,8\n"
             "act_bits = 2,4,8\n"
             "epochs = 2\n"
             "mc_samples = 2000\n"
             "out = run_exact6\n");
  CHECK(run("shapley-exact --config cfg_exact6.cfg", "exact6") == 0);
  const json j = json::parse(slurp("cli_exact6.out"));
  CHECK(j["players"].get<int>() == 6);
  CHECK(j["max_abs_deviation"].get<double>() < 0.05);
}

TEST_CASE("periodic checkpoints land on the configured cadence") {
  // dmpq has no stopping rule, so all four epochs run
  write_file("cfg_ckpt.cfg", base_config("out = run_ckpt\n"
                                         "method = dmpq\n"
                                         "epochs = 4\n"
                                         "checkpoint_every = 2\n"));
  CHECK(run("search --config cfg_ckpt.cfg", "ckpt") == 0);
  CHECK(fs::exists("run_ckpt/checkpoint_epoch2.bshp"));
  CHECK(fs::exists("run_ckpt/checkpoint_epoch4.bshp"));
  CHECK_FALSE(fs::exists("run_ckpt/checkpoint_epoch1.bshp"));
  CHECK(fs::exists("run_ckpt/checkpoint.bshp"));
}

TEST_CASE("analyze: pitfall emits a 4-row table on an s2 toy") {
  write_file("cfg_dmpq.cfg", base_config("out = run_dmpq\n"
                                         "method = dmpq\n"
                                         "space = s2\n"));
  REQUIRE(run("search --config cfg_dmpq.cfg", "dmpq_search") == 0);

  write_file("cfg_pitfall.cfg", base_config("space = s2\n"
                                            "dmpq_run = run_dmpq\n"
                                            "probe_layer = 0\n"
                                            "probe_kind = weight\n"
                                            "out = run_pitfall\n"));
  CHECK(run("analyze pitfall --config cfg_pitfall.cfg", "pitfall") == 0);
  CHECK(data_rows("run_pitfall/pitfall.csv") == 4);  // weight bits {1,2,3,4}
  const json j = json::parse(slurp("run_pitfall/pitfall.json"));
  CHECK(j["rows"].get<int>() == 4);
}

TEST_CASE("analyze: interaction with identical edits reports zero deltas") {
  write_file("cfg_smpq.cfg", base_config("out = run_smpq\n"));
  REQUIRE(run("search --config cfg_smpq.cfg", "smpq_search") == 0);
  const json policy = json::parse(slurp("run_smpq/policy.json"));
  const int w0 = policy["layers"][0]["weight_bits"].get<int>();
  const int w1 = policy["layers"][1]["weight_bits"].get<int>();

  write_file("cfg_inter.cfg",
             base_config("run_dir = run_smpq\n"
                         "edit1_layer = 0\nedit1_kind = weight\nedit1_bit = " +
                         std::to_string(w0) +
                         "\n"
                         "edit2_layer = 1\nedit2_kind = weight\nedit2_bit = " +
                         std::to_string(w1) +
                         "\n"
                         "out = run_inter\n"));
  CHECK(run("analyze interaction --config cfg_inter.cfg", "inter") == 0);
  const json j = json::parse(slurp("run_inter/interaction.json"));
  CHECK(j["delta_b1"].get<double>() == 0.0);
  CHECK(j["delta_b2"].get<double>() == 0.0);
  CHECK(j["delta_b3"].get<double>() == 0.0);
  CHECK(j["interaction_gap"].get<double>() == 0.0);
}

TEST_CASE("analyze: correlation reports both taus with provenance") {
  // the two-bit custom space holds only 4 distinct policies; k = 6 needs s2
  write_file("cfg_ca.cfg", base_config("out = run_corr_smpq\nspace = s2\n"));
  write_file("cfg_cb.cfg",
             base_config("out = run_corr_dmpq\nspace = s2\nmethod = dmpq\n"));
  REQUIRE(run("search --config cfg_ca.cfg", "corr_a") == 0);
  REQUIRE(run("search --config cfg_cb.cfg", "corr_b") == 0);

  write_file("cfg_corr.cfg", base_config("smpq_run = run_corr_smpq\n"
                                         "dmpq_run = run_corr_dmpq\n"
                                         "k_policies = 6\n"
                                         "out = run_corr\n"));
  CHECK(run("analyze correlation --config cfg_corr.cfg", "corr") == 0);
  const json j = json::parse(slurp("run_corr/correlation.json"));
  CHECK(j.contains("tau_smpq"));
  CHECK(j.contains("tau_dmpq"));
  CHECK(j["k_policies"].get<int>() == 6);
  CHECK(j["seed"].get<std::uint64_t>() == 7);
  CHECK(j["full_scale_reference_tau"].get<double>() ==
        doctest::Approx(0.494));
  CHECK(data_rows("run_corr/correlation.csv") == 12);  // 6 per method
}

TEST_CASE("missing analysis artifacts exit with a data error") {
  write_file("cfg_missing.cfg", base_config("dmpq_run = nowhere_dir\n"));
  CHECK(run("analyze pitfall --config cfg_missing.cfg", "missing") == 3);
}

// End-to-end tests running the installed command-line binary. The path to
// the binary arrives as argv[1]; every test shells out to it and inspects
// exit codes, stdout, and produced files.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string g_cli;
fs::path g_dir;

struct cli_result {
    int code = -1;
    std::string output; // stdout and stderr combined
};

cli_result run_cli(const std::string& args) {
    cli_result result;
    std::string cmd = g_cli + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return result;
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) result.output.append(buf, n);
    int status = pclose(pipe);
    result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

std::string read_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    os << text;
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> lines;
    std::stringstream ss(text);
    for (std::string line; std::getline(ss, line);) lines.push_back(line);
    return lines;
}

fs::path data_config_path() {
    fs::path path = g_dir / "data_config.json";
    if (!fs::exists(path))
        write_file(path, R"({"schema_version": 1, "cameras": 3, "identities": 5, "samples_per_identity": 4,
                             "latent_dim": 4, "input_dim": 8, "seed": 1})");
    return path;
}

fs::path train_config_path() {
    fs::path path = g_dir / "train_config.json";
    if (!fs::exists(path))
        write_file(path, R"({"schema_version": 1, "rounds": 2, "epochs_per_round": 1, "final_round_epochs": 1,
                             "hidden_dims": [8], "feature_dim": 6, "lr_encoder": 0.02, "lr_heads": 0.1})");
    return path;
}

/// Generates the shared small dataset once; later tests reuse the file.
fs::path dataset_path() {
    fs::path path = g_dir / "ds.jsonl";
    if (!fs::exists(path)) {
        cli_result r = run_cli("data gen --config " + data_config_path().string() + " --out " + path.string());
        EXPECT_EQ(r.code, 0) << r.output;
    }
    return path;
}

/// Trains the shared small checkpoint + log once (mate mode, seed 5).
std::pair<fs::path, fs::path> checkpoint_paths() {
    fs::path ckpt = g_dir / "model.json";
    fs::path log = g_dir / "train_log.csv";
    if (!fs::exists(ckpt)) {
        cli_result r = run_cli("train --data " + dataset_path().string() + " --config " +
                               train_config_path().string() + " --mode mate --seed 5 --out " + ckpt.string() +
                               " --log " + log.string());
        EXPECT_EQ(r.code, 0) << r.output;
    }
    return {ckpt, log};
}

// ---------------------------------------------------------------------------
// Argument handling.
// ---------------------------------------------------------------------------

TEST(cli, help_succeeds_and_missing_subcommand_fails) {
    EXPECT_EQ(run_cli("--help").code, 0);
    EXPECT_EQ(run_cli("").code, 2);
    EXPECT_EQ(run_cli("warp").code, 2);
    EXPECT_EQ(run_cli("data").code, 2);          // subcommand required
    EXPECT_EQ(run_cli("data gen").code, 2);      // --out required
    EXPECT_EQ(run_cli("data cost --n 5").code, 2);
}

// ---------------------------------------------------------------------------
// data cost / gen / transform.
// ---------------------------------------------------------------------------

TEST(cli, cost_prints_exact_counts) {
    cli_result r = run_cli("data cost --n 10 --m 2");
    ASSERT_EQ(r.code, 0) << r.output;
    json j = json::parse(r.output);
    EXPECT_EQ(j["identities"], 10);
    EXPECT_EQ(j["cameras"], 2);
    EXPECT_EQ(j["intra_total"], 200);
    EXPECT_EQ(j["inter_low"], 200);
    EXPECT_EQ(j["inter_high"], 400);

    json big = json::parse(run_cli("data cost --n 50 --m 15").output);
    EXPECT_EQ(big["intra_total"], 37500);
    EXPECT_EQ(big["inter_high"], 562500);

    EXPECT_EQ(run_cli("data cost --n 0 --m 3").code, 2);
}

TEST(cli, gen_is_deterministic_and_loadable) {
    fs::path a = g_dir / "gen_a.jsonl";
    fs::path b = g_dir / "gen_b.jsonl";
    std::string cfg = data_config_path().string();
    cli_result ra = run_cli("data gen --config " + cfg + " --out " + a.string());
    ASSERT_EQ(ra.code, 0) << ra.output;
    EXPECT_NE(ra.output.find("3 cameras"), std::string::npos);
    cli_result rb = run_cli("data gen --config " + cfg + " --out " + b.string());
    ASSERT_EQ(rb.code, 0);
    EXPECT_EQ(read_file(a), read_file(b)); // same config, same bytes

    fs::path c = g_dir / "gen_c.jsonl";
    run_cli("data gen --config " + cfg + " --seed 2 --out " + c.string());
    EXPECT_NE(read_file(a), read_file(c)); // seed override takes effect

    // the emitted file is one JSON object per line
    for (const std::string& line : lines_of(read_file(a))) EXPECT_NO_THROW(json::parse(line));
}

TEST(cli, gen_rejects_bad_configs) {
    fs::path out = g_dir / "never.jsonl";
    fs::path no_schema = g_dir / "no_schema.json";
    write_file(no_schema, R"({"cameras": 3})");
    EXPECT_EQ(run_cli("data gen --config " + no_schema.string() + " --out " + out.string()).code, 2);

    fs::path invalid = g_dir / "invalid.json";
    write_file(invalid, R"({"schema_version": 1, "cameras": 0})");
    EXPECT_EQ(run_cli("data gen --config " + invalid.string() + " --out " + out.string()).code, 2);

    fs::path garbled = g_dir / "garbled.json";
    write_file(garbled, "{nope");
    EXPECT_EQ(run_cli("data gen --config " + garbled.string() + " --out " + out.string()).code, 2);

    EXPECT_EQ(run_cli("data gen --config " + (g_dir / "absent.json").string() + " --out " + out.string()).code, 3);
}

TEST(cli, transform_relabels_deterministically) {
    fs::path in = dataset_path();
    fs::path a = g_dir / "ics_a.jsonl";
    fs::path b = g_dir / "ics_b.jsonl";
    ASSERT_EQ(run_cli("data transform --in " + in.string() + " --out " + a.string() + " --seed 3").code, 0);
    ASSERT_EQ(run_cli("data transform --in " + in.string() + " --out " + b.string() + " --seed 3").code, 0);
    EXPECT_EQ(read_file(a), read_file(b));

    fs::path c = g_dir / "ics_c.jsonl";
    ASSERT_EQ(run_cli("data transform --in " + in.string() + " --out " + c.string() + " --seed 4").code, 0);
    EXPECT_NE(read_file(a), read_file(c));

    EXPECT_EQ(run_cli("data transform --in " + (g_dir / "absent.jsonl").string() + " --out " + a.string()).code, 3);
}

TEST(cli, transform_requires_global_ids) {
    fs::path blind = g_dir / "blind.jsonl";
    write_file(blind,
               "{\"schema_version\": 1, \"M\": 1, \"label_space_sizes\": [2], \"split\": \"train\"}\n"
               "{\"id\": 0, \"camera\": 1, \"label\": 1, \"global_id\": null, \"x\": [0.0]}\n"
               "{\"id\": 1, \"camera\": 1, \"label\": 2, \"global_id\": null, \"x\": [1.0]}\n");
    cli_result r = run_cli("data transform --in " + blind.string() + " --out " + (g_dir / "out.jsonl").string());
    EXPECT_EQ(r.code, 3);
}

// ---------------------------------------------------------------------------
// train.
// ---------------------------------------------------------------------------

TEST(cli, train_writes_checkpoint_and_log) {
    auto [ckpt, log] = checkpoint_paths();
    json model = json::parse(read_file(ckpt));
    EXPECT_EQ(model["schema_version"], 1);
    EXPECT_EQ(model["kind"], "single");

    auto log_lines = lines_of(read_file(log));
    ASSERT_GE(log_lines.size(), 2u);
    EXPECT_EQ(log_lines[0].rfind("record,round,epoch,tau,", 0), 0u);
    EXPECT_EQ(log_lines[1].rfind("assoc,0,", 0), 0u); // association precedes the first epoch
}

TEST(cli, train_is_byte_deterministic) {
    auto [ckpt, log] = checkpoint_paths();
    fs::path ckpt2 = g_dir / "model2.json";
    fs::path log2 = g_dir / "train_log2.csv";
    cli_result r = run_cli("train --data " + dataset_path().string() + " --config " + train_config_path().string() +
                           " --mode mate --seed 5 --out " + ckpt2.string() + " --log " + log2.string());
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_EQ(read_file(ckpt), read_file(ckpt2));
    EXPECT_EQ(read_file(log), read_file(log2));
}

TEST(cli, train_error_exit_codes) {
    std::string data = dataset_path().string();
    std::string cfg = train_config_path().string();
    fs::path out = g_dir / "never_model.json";
    // unknown mode and unknown profile are configuration errors
    EXPECT_EQ(run_cli("train --data " + data + " --mode resnet --out " + out.string()).code, 2);
    EXPECT_EQ(run_cli("train --data " + data + " --profile gpu --out " + out.string()).code, 2);
    // missing dataset is a data error
    EXPECT_EQ(run_cli("train --data " + (g_dir / "absent.jsonl").string() + " --config " + cfg + " --out " +
                      out.string()).code, 3);
    // runaway learning rate is a numeric error
    fs::path wild = g_dir / "wild.json";
    write_file(wild, R"({"schema_version": 1, "rounds": 2, "epochs_per_round": 1, "final_round_epochs": 1,
                         "hidden_dims": [8], "feature_dim": 6, "lr_encoder": 1e8, "lr_heads": 1e8})");
    EXPECT_EQ(run_cli("train --data " + data + " --config " + wild.string() + " --mode pcmt --out " +
                      out.string()).code, 4);
}

// ---------------------------------------------------------------------------
// eval.
// ---------------------------------------------------------------------------

TEST(cli, eval_reports_metrics_json) {
    auto [ckpt, log] = checkpoint_paths();
    cli_result r = run_cli("eval --ckpt " + ckpt.string() + " --data " + dataset_path().string() + " --max-rank 5");
    ASSERT_EQ(r.code, 0) << r.output;
    json j = json::parse(r.output);
    EXPECT_EQ(j["schema_version"], 1);
    EXPECT_TRUE(j.contains("R1"));
    EXPECT_TRUE(j.contains("R5"));
    EXPECT_FALSE(j.contains("R10")); // beyond --max-rank
    ASSERT_TRUE(j["cmc"].is_array());
    EXPECT_EQ(j["cmc"].size(), 5u);
    EXPECT_DOUBLE_EQ(j["R1"].get<double>(), j["cmc"][0].get<double>());
    EXPECT_GE(j["mAP"].get<double>(), 0.0);
    EXPECT_LE(j["mAP"].get<double>(), 1.0);
    // one query per (camera, identity); every query is either scored or skipped
    EXPECT_EQ(j["queries"].get<int>() + j["skipped"].get<int>(), 15);
    EXPECT_GE(j["queries"].get<int>(), 1);
}

TEST(cli, eval_writes_files_and_is_deterministic) {
    auto [ckpt, log] = checkpoint_paths();
    fs::path out_a = g_dir / "metrics_a.json";
    fs::path out_b = g_dir / "metrics_b.json";
    fs::path dump = g_dir / "embeddings.csv";
    std::string base = "eval --ckpt " + ckpt.string() + " --data " + dataset_path().string();
    ASSERT_EQ(run_cli(base + " --out " + out_a.string() + " --dump-embeddings " + dump.string()).code, 0);
    ASSERT_EQ(run_cli(base + " --out " + out_b.string()).code, 0);
    EXPECT_EQ(read_file(out_a), read_file(out_b));

    auto dump_lines = lines_of(read_file(dump));
    ASSERT_FALSE(dump_lines.empty());
    EXPECT_EQ(dump_lines[0].rfind("id,camera,global_id,f0", 0), 0u);
    // header + one row per test sample: 3 cameras x 5 identities x (1 query + 2 gallery)
    EXPECT_EQ(dump_lines.size(), 1u + 15u + 30u);

    EXPECT_EQ(run_cli(base + " --normalize").code, 0);
    EXPECT_EQ(run_cli("eval --ckpt " + (g_dir / "absent.json").string() + " --data " + dataset_path().string()).code,
              3);
}

// ---------------------------------------------------------------------------
// assoc stats.
// ---------------------------------------------------------------------------

TEST(cli, assoc_stats_extracts_association_rows) {
    auto [ckpt, log] = checkpoint_paths();
    cli_result r = run_cli("assoc stats --log " + log.string());
    ASSERT_EQ(r.code, 0) << r.output;
    auto stats_lines = lines_of(r.output);
    ASSERT_EQ(stats_lines.size(), 3u); // header + one row per round
    EXPECT_EQ(stats_lines[0], "round,tau,predicted_pairs,correct_pairs,ground_truth_pairs,precision,recall");
    EXPECT_EQ(stats_lines[1].rfind("0,", 0), 0u);
    EXPECT_EQ(stats_lines[2].rfind("1,", 0), 0u);

    fs::path out = g_dir / "assoc_stats.csv";
    ASSERT_EQ(run_cli("assoc stats --log " + log.string() + " --out " + out.string()).code, 0);
    EXPECT_EQ(read_file(out), r.output); // file output matches the stdout form

    EXPECT_EQ(run_cli("assoc stats --log " + (g_dir / "absent.csv").string()).code, 3);
    fs::path mangled = g_dir / "mangled.csv";
    write_file(mangled, "round,loss\n1,2\n");
    EXPECT_EQ(run_cli("assoc stats --log " + mangled.string()).code, 3);
}

// ---------------------------------------------------------------------------
// bench and scope.
// ---------------------------------------------------------------------------

TEST(cli, bench_single_mode_layout) {
    fs::path out = g_dir / "bench.csv";
    cli_result r = run_cli("bench --modes pcmt --seeds 1 --out " + out.string());
    ASSERT_EQ(r.code, 0) << r.output;
    auto table_lines = lines_of(read_file(out));
    ASSERT_EQ(table_lines.size(), 3u);
    EXPECT_EQ(table_lines[0], "mode,seed,R1,R10,R20,mAP");
    EXPECT_EQ(table_lines[1].rfind("pcmt,1,", 0), 0u);
    EXPECT_EQ(table_lines[2].rfind("pcmt,mean,", 0), 0u);
}

TEST(cli, bench_ablation_runs_the_three_way_set) {
    fs::path out = g_dir / "ablation.csv";
    cli_result r = run_cli("bench --ablation --seeds 1 --out " + out.string());
    ASSERT_EQ(r.code, 0) << r.output;
    auto table_lines = lines_of(read_file(out));
    ASSERT_EQ(table_lines.size(), 7u); // header + 3 cells + 3 means
    EXPECT_EQ(table_lines[1].rfind("pcmt,1,", 0), 0u);
    EXPECT_EQ(table_lines[2].rfind("mate-no-ct,1,", 0), 0u);
    EXPECT_EQ(table_lines[3].rfind("mate,1,", 0), 0u);
    EXPECT_EQ(table_lines[4].rfind("pcmt,mean,", 0), 0u);
}

TEST(cli, bench_rejects_bad_seed_lists) {
    EXPECT_EQ(run_cli("bench --seeds 1,1 --modes pcmt").code, 2);
    EXPECT_EQ(run_cli("bench --seeds , --modes pcmt").code, 2);
    EXPECT_EQ(run_cli("bench --seeds nope --modes pcmt").code, 2);
    EXPECT_EQ(run_cli("bench --seeds 1 --modes resnet").code, 2);
    EXPECT_EQ(run_cli("bench --seeds 1 --profile gpu").code, 2);
}

TEST(cli, scope_single_cycle_layout) {
    fs::path out = g_dir / "scope.csv";
    cli_result r = run_cli("scope --cycles 2 --seed 1 --out " + out.string());
    ASSERT_EQ(r.code, 0) << r.output;
    auto report_lines = lines_of(read_file(out));
    ASSERT_EQ(report_lines.size(), 14u); // header + 12 association rounds + final row
    EXPECT_EQ(report_lines[0],
              "cycle_length,record,round,tau,predicted,correct,ground_truth,precision,recall,rank1,map");
    EXPECT_EQ(report_lines[1].rfind("2,round,0,", 0), 0u);
    EXPECT_EQ(report_lines[13].rfind("2,final,", 0), 0u);
}

TEST(cli, scope_rejects_bad_cycles) {
    EXPECT_EQ(run_cli("scope --cycles 7").code, 2);
    EXPECT_EQ(run_cli("scope --cycles abc").code, 2);
    EXPECT_EQ(run_cli("scope --cycles 1").code, 2);
}

} // namespace

int main(int argc, char** argv) {
    ::testing::InitGoogleTest(&argc, argv);
    if (argc < 2) {
        std::fprintf(stderr, "usage: test_cli <path-to-cli-binary>\n");
        return 1;
    }
    g_cli = argv[1];
    g_dir = fs::temp_directory_path() / "mate_cli_tests";
    std::error_code ec;
    fs::remove_all(g_dir, ec);
    fs::create_directories(g_dir);
    return RUN_ALL_TESTS();
}

// Command-line front end. Every subcommand is a thin wrapper over the
// library: parse arguments + config JSON, call the corresponding
// operation, serialize the result. Exit codes: 0 success, 2 bad
// configuration, 3 bad data, 4 numeric failure.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mate/mate.hpp"

namespace {

using nlohmann::json;

constexpr int exit_ok = 0;
constexpr int exit_config = 2;
constexpr int exit_data = 3;
constexpr int exit_numeric = 4;

json read_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw mate::data_error("cannot open config file: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw mate::config_error("invalid JSON in " + path + ": " + e.what());
    }
    return j;
}

void require_schema(const json& j, const std::string& path) {
    if (!j.is_object()) throw mate::config_error(path + ": config must be a JSON object");
    if (!j.contains("schema_version") || !j["schema_version"].is_number_integer() ||
        j["schema_version"].get<int>() != 1)
        throw mate::config_error(path + ": expected \"schema_version\": 1");
}

template <typename T>
void fetch(const json& j, const char* key, T& out, const std::string& path) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw mate::config_error(path + ": bad value for \"" + key + "\": " + e.what());
    }
}

mate::synth_config parse_synth_config(const json& j, const std::string& path) {
    require_schema(j, path);
    mate::synth_config cfg;
    fetch(j, "cameras", cfg.cameras, path);
    fetch(j, "identities", cfg.identities, path);
    fetch(j, "reappear_fraction", cfg.reappear_fraction, path);
    fetch(j, "samples_per_identity", cfg.samples_per_identity, path);
    fetch(j, "latent_dim", cfg.latent_dim, path);
    fetch(j, "input_dim", cfg.input_dim, path);
    fetch(j, "camera_transform_scale", cfg.camera_transform_scale, path);
    fetch(j, "camera_transform_spread", cfg.camera_transform_spread, path);
    fetch(j, "noise_sigma", cfg.noise_sigma, path);
    fetch(j, "seed", cfg.seed, path);
    fetch(j, "query_per_identity", cfg.query_per_identity, path);
    fetch(j, "gallery_per_identity", cfg.gallery_per_identity, path);
    cfg.validate();
    return cfg;
}

mate::train_config parse_train_config(const json& j, const std::string& path, mate::train_config base) {
    require_schema(j, path);
    mate::train_config cfg = base;
    std::string mode;
    fetch(j, "mode", mode, path);
    if (!mode.empty()) cfg.mode = mate::mode_from_string(mode);
    fetch(j, "rounds", cfg.rounds, path);
    fetch(j, "epochs_per_round", cfg.epochs_per_round, path);
    fetch(j, "final_round_epochs", cfg.final_round_epochs, path);
    fetch(j, "lambda", cfg.lambda, path);
    fetch(j, "tau_lower", cfg.tau_lower, path);
    fetch(j, "tau_upper", cfg.tau_upper, path);
    fetch(j, "identities_per_camera", cfg.identities_per_camera, path);
    fetch(j, "images_per_identity", cfg.images_per_identity, path);
    fetch(j, "lr_encoder", cfg.lr_encoder, path);
    fetch(j, "lr_heads", cfg.lr_heads, path);
    fetch(j, "momentum", cfg.momentum, path);
    fetch(j, "hidden_dims", cfg.hidden_dims, path);
    fetch(j, "feature_dim", cfg.feature_dim, path);
    fetch(j, "seed", cfg.seed, path);
    cfg.validate();
    return cfg;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            seeds.push_back(std::stoull(tok));
        } catch (const std::exception&) {
            throw mate::config_error("bad seed value '" + tok + "'");
        }
    }
    if (seeds.empty()) throw mate::config_error("empty seed list");
    for (std::size_t i = 0; i < seeds.size(); ++i)
        for (std::size_t j = i + 1; j < seeds.size(); ++j)
            if (seeds[i] == seeds[j]) throw mate::config_error("seeds must be distinct");
    return seeds;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path);
    if (!os) throw mate::data_error("cannot open for writing: " + path);
    return os;
}

// --- subcommand bodies ----------------------------------------------------

struct gen_args {
    std::string config;
    std::string out;
    std::int64_t seed = -1;
};

void run_data_gen(const gen_args& a) {
    mate::synth_config cfg;
    if (!a.config.empty()) cfg = parse_synth_config(read_json_file(a.config), a.config);
    if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
    mate::ics_dataset ds = mate::generate_synthetic(cfg);
    mate::save_dataset(ds, a.out);
    std::cout << "wrote " << a.out << ": " << ds.cameras << " cameras, " << ds.total_train() << " train, "
              << ds.query.size() << " query, " << ds.gallery.size() << " gallery samples\n";
}

void run_data_cost(std::int64_t n, std::int64_t m) {
    mate::cost_estimate est = mate::annotation_cost(n, m);
    json j{{"identities", n},
           {"cameras", m},
           {"intra_total", est.intra_total},
           {"inter_low", est.inter_low},
           {"inter_high", est.inter_high}};
    std::cout << j.dump(2) << '\n';
}

struct transform_args {
    std::string in;
    std::string out;
    std::uint64_t seed = 1;
};

void run_data_transform(const transform_args& a) {
    mate::ics_dataset ds = mate::load_dataset(a.in);
    mate::ics_dataset out = mate::ics_transform(ds, a.seed);
    mate::save_dataset(out, a.out);
    std::cout << "wrote " << a.out << '\n';
}

struct train_args {
    std::string data;
    std::string config;
    std::string mode;
    std::string profile = "desk";
    std::string out;
    std::string log;
    std::int64_t seed = -1;
};

void run_train(const train_args& a) {
    mate::train_config cfg = mate::profile_by_name(a.profile);
    if (!a.config.empty()) cfg = parse_train_config(read_json_file(a.config), a.config, cfg);
    if (!a.mode.empty()) cfg.mode = mate::mode_from_string(a.mode);
    if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
    mate::ics_dataset ds = mate::load_dataset(a.data);
    mate::train_result result = mate::train(ds, cfg);
    mate::save_checkpoint(result.ckpt, a.out);
    if (!a.log.empty()) mate::write_train_log_csv(result.log, a.log);
    std::cout << "trained " << mate::to_string(cfg.mode) << " for " << cfg.rounds << " rounds; checkpoint " << a.out
              << (a.log.empty() ? std::string{} : ", log " + a.log) << '\n';
}

struct eval_args {
    std::string ckpt;
    std::string data;
    std::string out;
    std::string dump;
    int max_rank = 20;
    bool normalize = false;
};

void run_eval(const eval_args& a) {
    mate::checkpoint ckpt = mate::load_checkpoint(a.ckpt);
    mate::ics_dataset ds = mate::load_dataset(a.data);
    mate::eval_result ev = mate::evaluate_retrieval(ckpt, ds, a.max_rank, a.normalize);
    json j{{"schema_version", 1}, {"mAP", ev.map}, {"queries", ev.queries}, {"skipped", ev.skipped}};
    for (int k : {1, 5, 10, 20})
        if (k <= a.max_rank) j["R" + std::to_string(k)] = ev.rank_k(k);
    j["cmc"] = ev.cmc;
    if (a.out.empty()) {
        std::cout << j.dump(2) << '\n';
    } else {
        auto os = open_out(a.out);
        os << j.dump(2) << '\n';
        std::cout << "wrote " << a.out << '\n';
    }
    if (!a.dump.empty()) {
        std::vector<mate::sample> all = ds.query;
        all.insert(all.end(), ds.gallery.begin(), ds.gallery.end());
        mate::dump_embeddings(all, mate::extract_features(ckpt, all), a.dump);
        std::cout << "wrote " << a.dump << '\n';
    }
}

struct assoc_stats_args {
    std::string log;
    std::string out;
};

void run_assoc_stats(const assoc_stats_args& a) {
    std::ifstream is(a.log);
    if (!is) throw mate::data_error("cannot open log file: " + a.log);
    std::vector<mate::log_row> rows = mate::parse_train_log_csv(is);
    if (a.out.empty()) {
        mate::write_association_stats_csv(rows, std::cout);
    } else {
        auto os = open_out(a.out);
        mate::write_association_stats_csv(rows, os);
        std::cout << "wrote " << a.out << '\n';
    }
}

struct bench_args {
    std::string out;
    std::string profile = "desk";
    std::string seeds = "4,5,11";
    std::string modes;
    bool ablation = false;
};

void run_bench(const bench_args& a) {
    mate::benchmark_config cfg;
    cfg.trainer = mate::profile_by_name(a.profile);
    cfg.seeds = parse_seed_list(a.seeds);
    if (a.ablation) {
        cfg.modes = {mate::train_mode::pcmt, mate::train_mode::mate_no_ct, mate::train_mode::mate};
    }
    if (!a.modes.empty()) {
        cfg.modes.clear();
        std::stringstream ss(a.modes);
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) cfg.modes.push_back(mate::mode_from_string(tok));
    }
    mate::benchmark_table table = mate::run_benchmark(cfg);
    if (a.out.empty()) {
        mate::write_benchmark_csv(cfg, table, std::cout);
    } else {
        auto os = open_out(a.out);
        mate::write_benchmark_csv(cfg, table, os);
        std::cout << "wrote " << a.out << '\n';
    }
}

struct scope_args {
    std::string out;
    std::string profile = "desk";
    std::string cycles = "2,3,4";
    std::int64_t seed = -1;
};

void run_scope(const scope_args& a) {
    mate::scope_config cfg;
    cfg.trainer = mate::profile_by_name(a.profile);
    if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
    cfg.cycle_lengths.clear();
    std::stringstream ss(a.cycles);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            cfg.cycle_lengths.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw mate::config_error("bad cycle length '" + tok + "'");
        }
    }
    std::vector<mate::scope_cell> cells = mate::run_scope_experiment(cfg);
    if (a.out.empty()) {
        mate::write_scope_csv(cells, std::cout);
    } else {
        auto os = open_out(a.out);
        mate::write_scope_csv(cells, os);
        std::cout << "wrote " << a.out << '\n';
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"intra-camera supervised re-id training and evaluation toolkit"};
    app.require_subcommand(1);

    // data gen / cost / transform
    auto* data = app.add_subcommand("data", "dataset generation and utilities");
    data->require_subcommand(1);

    gen_args gen;
    auto* data_gen = data->add_subcommand("gen", "generate a synthetic multi-camera dataset");
    data_gen->add_option("--config", gen.config, "synthetic generator config JSON");
    data_gen->add_option("--out", gen.out, "output dataset path (JSON lines)")->required();
    data_gen->add_option("--seed", gen.seed, "override config seed");

    std::int64_t cost_n = 0, cost_m = 0;
    auto* data_cost = data->add_subcommand("cost", "annotation cost calculator");
    data_cost->add_option("--n", cost_n, "identity count")->required();
    data_cost->add_option("--m", cost_m, "camera count")->required();

    transform_args transform;
    auto* data_transform = data->add_subcommand("transform", "re-label a fully-labelled dataset per camera");
    data_transform->add_option("--in", transform.in, "input dataset")->required();
    data_transform->add_option("--out", transform.out, "output dataset")->required();
    data_transform->add_option("--seed", transform.seed, "relabelling seed");

    train_args train;
    auto* train_cmd = app.add_subcommand("train", "train a model");
    train_cmd->add_option("--data", train.data, "training dataset")->required();
    train_cmd->add_option("--config", train.config, "training config JSON");
    train_cmd->add_option("--mode", train.mode, "mate|pcmt|mcst|epcs|mate-no-ct");
    train_cmd->add_option("--profile", train.profile, "desk|paper constants")->capture_default_str();
    train_cmd->add_option("--out", train.out, "checkpoint output path")->required();
    train_cmd->add_option("--log", train.log, "training log CSV path");
    train_cmd->add_option("--seed", train.seed, "override seed");

    eval_args eval;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate retrieval quality");
    eval_cmd->add_option("--ckpt", eval.ckpt, "checkpoint path")->required();
    eval_cmd->add_option("--data", eval.data, "dataset with query/gallery splits")->required();
    eval_cmd->add_option("--out", eval.out, "metrics JSON output (stdout if omitted)");
    eval_cmd->add_option("--max-rank", eval.max_rank, "largest CMC rank")->capture_default_str();
    eval_cmd->add_flag("--normalize", eval.normalize, "L2-normalize features before distances");
    eval_cmd->add_option("--dump-embeddings", eval.dump, "also write test-split embeddings CSV");

    assoc_stats_args assoc;
    auto* assoc_cmd = app.add_subcommand("assoc", "association utilities");
    assoc_cmd->require_subcommand(1);
    auto* assoc_stats = assoc_cmd->add_subcommand("stats", "per-round association statistics from a train log");
    assoc_stats->add_option("--log", assoc.log, "train log CSV")->required();
    assoc_stats->add_option("--out", assoc.out, "stats CSV output (stdout if omitted)");

    bench_args bench;
    auto* bench_cmd = app.add_subcommand("bench", "mode x seed benchmark table");
    bench_cmd->add_option("--out", bench.out, "table CSV output (stdout if omitted)");
    bench_cmd->add_option("--profile", bench.profile, "desk|paper constants")->capture_default_str();
    bench_cmd->add_option("--seeds", bench.seeds, "comma-separated seed list")->capture_default_str();
    bench_cmd->add_option("--modes", bench.modes, "comma-separated mode list (default all four)");
    bench_cmd->add_flag("--ablation", bench.ablation, "run the pcmt / mate-no-ct / mate ablation set");

    scope_args scope;
    auto* scope_cmd = app.add_subcommand("scope", "associative scope study over cycle lengths");
    scope_cmd->add_option("--out", scope.out, "report CSV output (stdout if omitted)");
    scope_cmd->add_option("--profile", scope.profile, "desk|paper constants")->capture_default_str();
    scope_cmd->add_option("--cycles", scope.cycles, "comma-separated cycle lengths")->capture_default_str();
    scope_cmd->add_option("--seed", scope.seed, "override data+trainer seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? exit_ok : exit_config;
    }

    try {
        if (data_gen->parsed()) run_data_gen(gen);
        else if (data_cost->parsed()) run_data_cost(cost_n, cost_m);
        else if (data_transform->parsed()) run_data_transform(transform);
        else if (train_cmd->parsed()) run_train(train);
        else if (eval_cmd->parsed()) run_eval(eval);
        else if (assoc_stats->parsed()) run_assoc_stats(assoc);
        else if (bench_cmd->parsed()) run_bench(bench);
        else if (scope_cmd->parsed()) run_scope(scope);
    } catch (const mate::config_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const mate::data_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return exit_data;
    } catch (const mate::numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return exit_numeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_data;
    }
    return exit_ok;
}

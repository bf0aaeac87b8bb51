// Command-line front end: parse, augment, pretrain, eval-relations, embed,
// train-task. Exit codes: 0 ok, 1 input error, 2 numeric failure, 3 config
// error.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dice/contrastive.hpp"
#include "dice/downstream.hpp"

namespace fs = std::filesystem;
using namespace dice;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Run settings assembled from defaults, then a JSON config file, then flags.
struct RunConfig {
    EncoderSpec encoder;
    LossConfig loss;
    TrainConfig train;
};

void apply_config_file(RunConfig& cfg, const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config json: ") + e.what());
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        const auto& v = it.value();
        try {
            if (k == "arch") cfg.encoder.arch = arch_from_name(v.get<std::string>());
            else if (k == "depth") cfg.encoder.depth = v.get<int>();
            else if (k == "hidden") cfg.encoder.hidden = v.get<int>();
            else if (k == "dropout") cfg.encoder.dropout = v.get<double>();
            else if (k == "norm") {
                const auto s = v.get<std::string>();
                if (s == "layer") cfg.encoder.norm = NormKind::Layer;
                else if (s == "none") cfg.encoder.norm = NormKind::None;
                else throw ConfigError("unknown norm '" + s + "'");
            } else if (k == "message_source") {
                const auto s = v.get<std::string>();
                if (s == "receiver") cfg.encoder.message_source = MessageSource::Receiver;
                else if (s == "sender") cfg.encoder.message_source = MessageSource::Sender;
                else throw ConfigError("unknown message_source '" + s + "'");
            } else if (k == "loss") cfg.loss.kind = loss_from_name(v.get<std::string>());
            else if (k == "tau") cfg.loss.tau = v.get<double>();
            else if (k == "tau_p") cfg.loss.tau_p = v.get<double>();
            else if (k == "tau_n") cfg.loss.tau_n = v.get<double>();
            else if (k == "lr") cfg.train.lr = v.get<double>();
            else if (k == "batch_size") cfg.train.batch_size = v.get<int>();
            else if (k == "epochs") cfg.train.epochs = v.get<int>();
            else if (k == "seed") cfg.train.seed = v.get<unsigned long long>();
            else if (k == "holdout_fraction") cfg.train.holdout_fraction = v.get<double>();
            else throw ConfigError("unknown config key '" + k + "'");
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config key '" + k + "': " + e.what());
        }
    }
    if (cfg.loss.tau <= 0 || cfg.loss.tau_p <= 0 || cfg.loss.tau_n <= 0) {
        throw ConfigError("temperatures must be positive");
    }
}

std::vector<fs::path> sorted_files(const std::string& dir, const std::string& ext) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ext) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

CircuitGraph load_graph_file(const std::string& path) {
    const fs::path p(path);
    if (p.extension() == ".sp") {
        Netlist nl = parse_netlist(read_file(path), p.stem().string());
        return build_graph(nl);
    }
    return graph_from_json(read_file(path));
}

EncoderSpec load_ckpt(const std::string& path, ParamStore& params) {
    return encoder_spec_from_json(load_checkpoint(path, params));
}

std::vector<std::vector<double>> embed_samples(const std::vector<AugmentedSample>& samples,
                                               const EncoderSpec& spec, ParamStore& params) {
    std::vector<std::vector<double>> out;
    out.reserve(samples.size());
    Rng rng(0);  // eval mode, unused
    const std::size_t chunk = 256;
    for (std::size_t start = 0; start < samples.size(); start += chunk) {
        const std::size_t stop = std::min(samples.size(), start + chunk);
        std::vector<const CircuitGraph*> graphs;
        for (std::size_t i = start; i < stop; ++i) graphs.push_back(&samples[i].graph);
        const BatchedGraph batch = BatchedGraph::pack(graphs);
        GraphEmbedding emb = encode(batch, spec, params, /*train_mode=*/false, rng);
        const int h = emb.g.cols();
        for (std::size_t i = 0; i < graphs.size(); ++i) {
            out.emplace_back(emb.g.data().begin() + static_cast<long>(i) * h,
                             emb.g.data().begin() + static_cast<long>(i + 1) * h);
        }
    }
    return out;
}

int cmd_parse(const std::string& input, const std::string& emit_graph) {
    Netlist nl = parse_netlist(read_file(input), fs::path(input).stem().string());
    std::vector<std::string> warnings;
    CircuitGraph g = build_graph(nl, {}, &warnings);
    check_graph_invariants(g);
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    const std::string json = graph_to_json(g, nl.name);
    if (!emit_graph.empty()) {
        std::ofstream out(emit_graph);
        if (!out) throw Error("cannot write: " + emit_graph);
        out << json << '\n';
    } else {
        std::cout << nl.name << ": " << g.num_nodes() << " nodes, " << g.num_arcs()
                  << " arcs\n";
    }
    return 0;
}

int cmd_augment(const std::string& corpus_dir, int n_pos, int n_neg, int max_chain,
                unsigned long long seed, const std::string& out_dir) {
    std::vector<CircuitGraph> corpus;
    for (const auto& p : sorted_files(corpus_dir, ".sp")) {
        Netlist nl = parse_netlist(read_file(p.string()), p.stem().string());
        corpus.push_back(build_graph(nl));
    }
    if (corpus.empty()) throw EmptyCorpus();
    auto samples = generate_dataset(corpus, n_pos, n_neg, max_chain, seed);
    write_dataset(out_dir, samples);
    std::cout << "wrote " << samples.size() << " samples to " << out_dir << '\n';
    return 0;
}

int cmd_pretrain(const std::string& dataset_dir, const RunConfig& cfg, const std::string& out,
                 const std::string& metrics_path) {
    auto samples = read_dataset(dataset_dir);
    RelationIndex rel = build_relation_index(samples);
    PretrainResult result = pretrain(samples, rel, cfg.encoder, cfg.loss, cfg.train,
                                     [](const EpochMetrics& m) {
                                         std::cerr << "epoch " << m.epoch << " loss "
                                                   << m.mean_loss << " pos " << m.pos_mean
                                                   << " noneq " << m.noneq_mean << '\n';
                                     });
    save_checkpoint(out, result.params, encoder_spec_to_json(cfg.encoder));
    const std::string mpath = metrics_path.empty() ? out + ".metrics.csv" : metrics_path;
    write_metrics_csv(mpath, result.metrics);
    std::cout << "checkpoint: " << out << "\nmetrics: " << mpath << '\n';
    return 0;
}

int cmd_eval_relations(const std::string& dataset_dir, const std::string& ckpt) {
    auto samples = read_dataset(dataset_dir);
    RelationIndex rel = build_relation_index(samples);
    ParamStore params;
    EncoderSpec spec = load_ckpt(ckpt, params);
    auto embs = embed_samples(samples, spec, params);
    std::vector<int> ids(samples.size());
    std::iota(ids.begin(), ids.end(), 0);
    RelationStats st = relation_stats(embs, rel, ids);
    std::cout << "relation,mean,std,pairs\n"
              << "positive," << format_double(st.pos_mean) << ',' << format_double(st.pos_std)
              << ',' << st.pos_n << '\n'
              << "negative," << format_double(st.neg_mean) << ',' << format_double(st.neg_std)
              << ',' << st.neg_n << '\n'
              << "non_equal," << format_double(st.noneq_mean) << ','
              << format_double(st.noneq_std) << ',' << st.noneq_n << '\n';
    return 0;
}

int cmd_embed(const std::vector<std::string>& inputs, const std::string& ckpt,
              const std::string& out) {
    std::vector<AugmentedSample> samples;
    for (const auto& path : inputs) {
        AugmentedSample s;
        s.graph = load_graph_file(path);
        s.id = fs::path(path).stem().string();
        s.origin_id = s.graph.origin.empty() ? s.id : s.graph.origin;
        samples.push_back(std::move(s));
    }
    ParamStore params;
    EncoderSpec spec = load_ckpt(ckpt, params);
    write_embeddings_csv(out, samples, embed_samples(samples, spec, params));
    std::cout << "wrote " << samples.size() << " embeddings to " << out << '\n';
    return 0;
}

int cmd_train_task(int task, const std::string& data_dir, const std::string& ckpt,
                   const std::string& depths, const DownstreamConfig& base,
                   const TaskTrainConfig& train, const std::string& out) {
    DownstreamConfig config = base;
    {
        std::stringstream ss(depths);
        std::string tok;
        std::vector<int> d;
        while (std::getline(ss, tok, ',')) d.push_back(std::stoi(tok));
        if (d.size() != 3) throw ConfigError("--depths must be dD,dp,ds");
        config.d_dice = d[0];
        config.d_par = d[1];
        config.d_series = d[2];
    }

    nlohmann::json metrics;
    if (task == 1) {
        nlohmann::json labels_json;
        try {
            labels_json = nlohmann::json::parse(read_file(data_dir + "/labels.json"));
        } catch (const nlohmann::json::exception& e) {
            throw Error(std::string("bad labels.json: ") + e.what());
        }
        std::vector<CircuitGraph> circuits;
        std::vector<std::vector<std::string>> labels;
        for (const auto& p : sorted_files(data_dir, ".sp")) {
            const std::string stem = p.stem().string();
            if (!labels_json.contains(stem)) {
                throw Error("labels.json has no entry for '" + stem + "'");
            }
            Netlist nl = parse_netlist(read_file(p.string()), stem);
            circuits.push_back(build_graph(nl));
            labels.push_back(labels_json[stem].get<std::vector<std::string>>());
        }
        Task1Result r = train_task1(circuits, labels, config, ckpt, train);
        metrics["accuracy"] = r.test_accuracy;
        metrics["final_train_loss"] = r.final_train_loss;
        metrics["trainable_params"] = r.trainable_params;
    } else {
        RegressionData data = read_regression_data(data_dir);
        const int expected = task == 2 ? 2 : 5;
        if (data.n_targets != expected) {
            std::cerr << "note: task " << task << " nominally has " << expected
                      << " targets; dataset has " << data.n_targets << '\n';
        }
        RegressionResult r = train_regression(data, config, ckpt, train);
        metrics["r2"] = r.test_r2;
        metrics["final_train_loss"] = r.final_train_loss;
        metrics["trainable_params"] = r.trainable_params;
    }

    nlohmann::json report;
    report["task"] = task;
    report["config"] = {{"d_dice", config.d_dice},   {"d_par", config.d_par},
                        {"d_series", config.d_series}, {"hidden", config.hidden},
                        {"dropout", config.dropout},   {"lr", train.lr},
                        {"epochs", train.epochs},      {"batch_size", train.batch_size}};
    report["seed"] = train.seed;
    report["metrics"] = metrics;
    const std::string text = report.dump(2);
    if (!out.empty()) {
        std::ofstream f(out);
        if (!f) throw Error("cannot write: " + out);
        f << text << '\n';
    }
    std::cout << text << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"circuit graph contrastive pretraining toolkit"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "worker lane cap (current build is single-threaded)");

    // parse
    std::string in_sp, emit_graph;
    auto* parse = app.add_subcommand("parse", "netlist -> graph json");
    parse->add_option("input", in_sp, "netlist file")->required();
    parse->add_option("--emit-graph", emit_graph, "write graph json here");

    // augment
    std::string corpus_dir, aug_out;
    int n_pos = 100, n_neg = 100, max_chain = 5;
    unsigned long long aug_seed = 0;
    auto* augment = app.add_subcommand("augment", "generate a contrastive dataset");
    augment->add_option("corpus", corpus_dir, "directory of .sp netlists")->required();
    augment->add_option("--n-pos", n_pos, "positives per origin");
    augment->add_option("--n-neg", n_neg, "negatives per origin");
    augment->add_option("--max-chain", max_chain, "max augmentation chain length");
    augment->add_option("--seed", aug_seed, "rng seed");
    augment->add_option("--out", aug_out, "output dataset directory")->required();

    // pretrain
    std::string dataset_dir, config_path, ckpt_out, metrics_path;
    RunConfig cfg;
    std::string f_arch, f_loss;
    int f_depth = 0, f_hidden = 0, f_batch = 0, f_epochs = 0;
    double f_dropout = 0, f_tau = 0, f_tau_p = 0, f_tau_n = 0, f_lr = 0, f_holdout = 0;
    unsigned long long f_seed = 0;
    auto* pre = app.add_subcommand("pretrain", "contrastive pretraining");
    pre->add_option("dataset", dataset_dir, "dataset directory")->required();
    pre->add_option("--config", config_path, "json config file");
    pre->add_option("--out", ckpt_out, "checkpoint path")->required();
    pre->add_option("--metrics", metrics_path, "metrics csv path");
    auto* o_arch = pre->add_option("--arch", f_arch, "dice|gcn|graphsage|gat|gin");
    auto* o_depth = pre->add_option("--depth", f_depth);
    auto* o_hidden = pre->add_option("--hidden", f_hidden);
    auto* o_dropout = pre->add_option("--dropout", f_dropout);
    auto* o_loss = pre->add_option("--loss", f_loss, "nt_xent|simsiam|dice");
    auto* o_tau = pre->add_option("--tau", f_tau);
    auto* o_tau_p = pre->add_option("--tau-p", f_tau_p);
    auto* o_tau_n = pre->add_option("--tau-n", f_tau_n);
    auto* o_lr = pre->add_option("--lr", f_lr);
    auto* o_batch = pre->add_option("--batch-size", f_batch);
    auto* o_epochs = pre->add_option("--epochs", f_epochs);
    auto* o_seed = pre->add_option("--seed", f_seed);
    auto* o_holdout = pre->add_option("--holdout", f_holdout, "held-out fraction");

    // eval-relations
    std::string eval_dataset, eval_ckpt;
    auto* evalr = app.add_subcommand("eval-relations", "cosine stats per relation class");
    evalr->add_option("dataset", eval_dataset, "dataset directory")->required();
    evalr->add_option("--ckpt", eval_ckpt, "checkpoint")->required();

    // embed
    std::vector<std::string> embed_inputs;
    std::string embed_ckpt, embed_out;
    auto* embed = app.add_subcommand("embed", "export embeddings as csv");
    embed->add_option("graphs", embed_inputs, "graph json or .sp files")->required();
    embed->add_option("--ckpt", embed_ckpt, "checkpoint")->required();
    embed->add_option("--out", embed_out, "output csv")->required();

    // train-task
    int task = 1;
    std::string task_data, task_ckpt, task_depths = "0,0,0", task_out;
    DownstreamConfig down;
    TaskTrainConfig task_train;
    auto* tt = app.add_subcommand("train-task", "downstream training");
    tt->add_option("task", task, "1, 2 or 3")->required()->check(CLI::Range(1, 3));
    tt->add_option("--data", task_data, "task data directory")->required();
    tt->add_option("--ckpt", task_ckpt, "pretrained checkpoint (needed when dD > 0)");
    tt->add_option("--depths", task_depths, "dD,dp,ds");
    tt->add_option("--hidden", down.hidden);
    tt->add_option("--dropout", down.dropout);
    tt->add_option("--lr", task_train.lr);
    tt->add_option("--epochs", task_train.epochs);
    tt->add_option("--batch-size", task_train.batch_size);
    tt->add_option("--seed", task_train.seed);
    tt->add_option("--out", task_out, "metrics json path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*parse) return cmd_parse(in_sp, emit_graph);
        if (*augment) return cmd_augment(corpus_dir, n_pos, n_neg, max_chain, aug_seed, aug_out);
        if (*pre) {
            if (!config_path.empty()) apply_config_file(cfg, config_path);
            if (o_arch->count()) cfg.encoder.arch = arch_from_name(f_arch);
            if (o_depth->count()) cfg.encoder.depth = f_depth;
            if (o_hidden->count()) cfg.encoder.hidden = f_hidden;
            if (o_dropout->count()) cfg.encoder.dropout = f_dropout;
            if (o_loss->count()) cfg.loss.kind = loss_from_name(f_loss);
            if (o_tau->count()) cfg.loss.tau = f_tau;
            if (o_tau_p->count()) cfg.loss.tau_p = f_tau_p;
            if (o_tau_n->count()) cfg.loss.tau_n = f_tau_n;
            if (o_lr->count()) cfg.train.lr = f_lr;
            if (o_batch->count()) cfg.train.batch_size = f_batch;
            if (o_epochs->count()) cfg.train.epochs = f_epochs;
            if (o_seed->count()) cfg.train.seed = f_seed;
            if (o_holdout->count()) cfg.train.holdout_fraction = f_holdout;
            return cmd_pretrain(dataset_dir, cfg, ckpt_out, metrics_path);
        }
        if (*evalr) return cmd_eval_relations(eval_dataset, eval_ckpt);
        if (*embed) return cmd_embed(embed_inputs, embed_ckpt, embed_out);
        if (*tt) return cmd_train_task(task, task_data, task_ckpt, task_depths, down,
                                       task_train, task_out);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

// lexgen: train HMM guidance models, distill them from a teacher LM, and
// generate token sequences that provably satisfy CNF lexical constraints.
//
// Exit codes: 0 success, 2 input/format error, 3 infeasible constraint,
// 4 internal assertion failure.

#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lexgen/corpus.hpp"
#include "lexgen/decode.hpp"
#include "lexgen/dp.hpp"
#include "lexgen/errors.hpp"
#include "lexgen/hmm.hpp"
#include "lexgen/lm.hpp"
#include "lexgen/manifest.hpp"
#include "lexgen/oracle.hpp"
#include "lexgen/parallel.hpp"
#include "lexgen/train.hpp"

using nlohmann::json;
using namespace lexgen;

namespace {

int dispatch(const std::string& cmd, const json& opt);

// ---------------------------------------------------------------------------
// shared helpers

TokenSeq parse_token_list(const std::string& text) {
    std::istringstream in(text);
    TokenSeq out;
    long long v;
    while (in >> v) out.push_back(static_cast<Token>(v));
    if (!in.eof()) throw InputError("not a token id list: " + text);
    return out;
}

std::vector<TokenSeq> load_token_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    std::vector<TokenSeq> out;
    std::string line;
    while (std::getline(in, line)) out.push_back(parse_token_list(line));
    return out;
}

std::string join_tokens(const TokenSeq& seq) {
    std::ostringstream out;
    for (size_t i = 0; i < seq.size(); ++i) {
        if (i) out << ' ';
        out << seq[i];
    }
    return out.str();
}

// Base-LM specifier:
//   self                      the guidance model itself (generate only)
//   hmm:PATH                  an HMM model file scored exactly
//   ngram:PATH:ORDER:DELTA    fixed-order n-gram fitted on a corpus file
//   exec:COMMAND              external child process speaking the line protocol
std::unique_ptr<BaseLm> make_lm(const std::string& spec, int vocab, Token eos,
                                int max_len, const Hmm* guidance) {
    if (spec == "self") {
        if (!guidance) throw InputError("--lm self needs a guidance model");
        return hmm_as_lm(*guidance);
    }
    auto colon = spec.find(':');
    std::string kind = spec.substr(0, colon == std::string::npos ? spec.size() : colon);
    std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
    if (kind == "hmm") {
        if (rest.empty()) throw InputError("hmm: LM spec needs a path");
        return std::make_unique<HmmLm>(Hmm::load(rest));
    }
    if (kind == "exec") {
        if (rest.empty()) throw InputError("exec: LM spec needs a command");
        if (vocab < 1) throw InputError("exec: LM needs a vocabulary size");
        return std::make_unique<ExternalLm>(rest, vocab);
    }
    if (kind == "ngram") {
        auto p1 = rest.rfind(':');
        auto p2 = p1 == std::string::npos ? std::string::npos : rest.rfind(':', p1 - 1);
        if (p2 == std::string::npos)
            throw InputError("ngram LM spec is ngram:PATH:ORDER:DELTA");
        std::string path = rest.substr(0, p2);
        int order = std::stoi(rest.substr(p2 + 1, p1 - p2 - 1));
        double delta = std::stod(rest.substr(p1 + 1));
        if (vocab < 1 || max_len < 1)
            throw InputError("ngram: LM needs vocabulary size and max length");
        Corpus corpus = load_corpus(path, max_len, eos, vocab);
        return std::make_unique<NgramLm>(NgramLm::fit(corpus, order, delta));
    }
    throw InputError("unknown LM spec: " + spec);
}

// The path part of an LM spec, when it has one (for manifest digests).
std::string lm_spec_input_path(const std::string& spec) {
    if (spec.rfind("hmm:", 0) == 0) return spec.substr(4);
    if (spec.rfind("ngram:", 0) == 0) {
        std::string rest = spec.substr(6);
        auto p1 = rest.rfind(':');
        auto p2 = p1 == std::string::npos ? std::string::npos : rest.rfind(':', p1 - 1);
        if (p2 != std::string::npos) return rest.substr(0, p2);
    }
    return "";
}

void write_manifest(const json& opt, const std::string& cmd,
                    const std::vector<std::pair<std::string, std::string>>& inputs) {
    std::string path = opt.value("manifest_out", "");
    if (path.empty()) return;
    RunManifest m;
    m.command = cmd;
    m.options = opt;
    for (const auto& [name, file] : inputs)
        if (!file.empty()) m.add_input(name, file);
    m.save(path);
}

Cnf compile_from_file(const std::string& path, int vocab, int clause_cap) {
    return Cnf::compile(load_constraint_file(path), vocab, clause_cap);
}

std::vector<int> identity_order(int m) {
    std::vector<int> order(m);
    for (int i = 0; i < m; ++i) order[i] = i;
    return order;
}

// ---------------------------------------------------------------------------
// train

int run_train(const json& opt) {
    const int vocab = opt.at("vocab_size").get<int>();
    const Token eos = opt.at("eos_token").get<Token>();
    const int max_len = opt.at("max_len").get<int>();
    const int states = opt.at("states").get<int>();
    const int epochs = opt.at("epochs").get<int>();
    const double smoothing = opt.at("smoothing").get<double>();
    const uint64_t seed = opt.at("seed").get<uint64_t>();
    const double heldout_fraction = opt.at("heldout_fraction").get<double>();
    const int threads = opt.at("threads").get<int>();

    Corpus full = load_corpus(opt.at("corpus").get<std::string>(), max_len, eos, vocab);
    if (full.size() == 0) throw InputError("training corpus is empty");

    // seeded split: a fixed prefix of a shuffled index set becomes held-out
    Rng rng(seed);
    std::vector<size_t> idx(full.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.next_u64() % i]);
    size_t heldout_count =
        std::min(full.size() - 1,
                 static_cast<size_t>(heldout_fraction * static_cast<double>(full.size())));
    Corpus train, heldout;
    train.max_len = heldout.max_len = max_len;
    train.eos = heldout.eos = eos;
    train.vocab_size = heldout.vocab_size = vocab;
    for (size_t i = 0; i < idx.size(); ++i)
        (i < heldout_count ? heldout : train).sequences.push_back(full.sequences[idx[i]]);

    Hmm model = make_eos_absorbing(random_hmm(states, vocab, max_len, eos, seed));
    std::ofstream metrics;
    std::string metrics_path = opt.value("metrics_out", "");
    if (!metrics_path.empty()) {
        metrics.open(metrics_path);
        if (!metrics) throw InputError("cannot open " + metrics_path + " for writing");
    }
    double train_ll = 0.0, heldout_ll = 0.0;
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        auto [updated, ll] = em_step(model, train, smoothing, threads);
        model = std::move(updated);
        train_ll = ll;
        heldout_ll = heldout.size() ? corpus_loglik(model, heldout, threads) : 0.0;
        json rec = {{"epoch", epoch}, {"train_ll", train_ll}, {"heldout_ll", heldout_ll}};
        if (metrics.is_open()) metrics << rec.dump() << "\n";
        std::cerr << "epoch " << epoch << " train_ll " << train_ll << " heldout_ll "
                  << heldout_ll << "\n";
    }
    model.save(opt.at("out").get<std::string>());
    write_manifest(opt, "train", {{"corpus", opt.at("corpus").get<std::string>()}});
    if (opt.value("json", false))
        std::cout << json({{"model", opt.at("out").get<std::string>()},
                           {"train_ll", train_ll},
                           {"heldout_ll", heldout_ll}})
                         .dump()
                  << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// distill

int run_distill(const json& opt) {
    const std::string teacher_spec = opt.at("teacher").get<std::string>();
    const int states = opt.at("states").get<int>();
    const uint64_t seed = opt.at("seed").get<uint64_t>();

    int vocab = opt.value("vocab_size", 0);
    Token eos = opt.value("eos_token", -1);
    int max_len = opt.value("max_len", 0);
    if (teacher_spec.rfind("hmm:", 0) == 0) {
        Hmm teacher_model = Hmm::load(teacher_spec.substr(4));
        if (vocab == 0) vocab = teacher_model.vocab_size();
        if (eos < 0) eos = teacher_model.eos_token();
        if (max_len == 0) max_len = teacher_model.max_len();
    }
    if (vocab < 1 || eos < 0 || max_len < 1)
        throw InputError(
            "distill needs --vocab-size, --eos-token and --max-len unless the "
            "teacher is an hmm: spec");

    std::unique_ptr<BaseLm> teacher = make_lm(teacher_spec, vocab, eos, max_len, nullptr);
    Hmm student = make_eos_absorbing(random_hmm(states, vocab, max_len, eos, seed));

    TrainConfig cfg;
    cfg.epochs = opt.at("epochs").get<int>();
    cfg.samples_per_epoch = opt.at("samples_per_epoch").get<long long>();
    cfg.resample_each_epoch = !opt.value("no_resample", false);
    cfg.heldout_samples = opt.at("heldout_samples").get<long long>();
    cfg.smoothing = opt.at("smoothing").get<double>();
    cfg.seed = seed;
    cfg.threads = opt.at("threads").get<int>();

    DistillResult result = distill(*teacher, student, cfg);

    std::string trace_path = opt.value("trace_out", "");
    if (!trace_path.empty()) {
        std::ofstream trace(trace_path);
        if (!trace) throw InputError("cannot open " + trace_path + " for writing");
        for (const EpochMetric& m : result.trace)
            trace << json({{"epoch", m.epoch},
                           {"train_ll", m.train_ll},
                           {"heldout_ll", m.heldout_ll}})
                         .dump()
                  << "\n";
    }
    for (const EpochMetric& m : result.trace)
        std::cerr << "epoch " << m.epoch << " train_ll " << m.train_ll
                  << " heldout_ll " << m.heldout_ll << "\n";
    result.model.save(opt.at("out").get<std::string>());
    write_manifest(opt, "distill", {{"teacher", lm_spec_input_path(teacher_spec)}});
    if (opt.value("json", false))
        std::cout << json({{"model", opt.at("out").get<std::string>()},
                           {"final_heldout_ll", result.trace.back().heldout_ll}})
                         .dump()
                  << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// generate

int run_generate(const json& opt) {
    Hmm model = Hmm::load(opt.at("model").get<std::string>());
    Cnf cnf = compile_from_file(opt.at("constraints").get<std::string>(),
                                model.vocab_size(),
                                opt.value("clause_cap", kDefaultClauseCap));
    const int threads = opt.at("threads").get<int>();
    int horizon = opt.value("max_len", 0);
    if (horizon == 0) horizon = model.max_len();

    DpCache cache =
        opt.value("ordered", false)
            ? DpCache::build_ordered(model, cnf, identity_order(cnf.num_clauses()),
                                     horizon, threads)
            : DpCache::build(model, cnf, horizon, threads);

    DecodeConfig cfg;
    std::string mode = opt.at("mode").get<std::string>();
    if (mode == "unsupervised")
        cfg.mode = FusionMode::kUnsupervised;
    else if (mode == "supervised")
        cfg.mode = FusionMode::kSupervised;
    else
        throw InputError("mode must be unsupervised or supervised");
    cfg.weight = opt.at("weight").get<double>();
    cfg.beam_size = opt.at("beam_size").get<int>();
    cfg.seed = opt.at("seed").get<uint64_t>();
    cfg.threads = threads;
    std::string strategy = opt.at("strategy").get<std::string>();
    if (strategy != "sample" && strategy != "beam")
        throw InputError("strategy must be sample or beam");
    cfg.strategy = strategy == "beam" ? Strategy::kBeam : Strategy::kSample;

    std::unique_ptr<BaseLm> lm =
        make_lm(opt.at("lm").get<std::string>(), model.vocab_size(),
                model.eos_token(), horizon, &model);

    const int count = opt.at("count").get<int>();
    std::vector<GenOutput> outputs;
    if (cfg.strategy == Strategy::kSample) {
        Rng rng(cfg.seed);
        for (int i = 0; i < count; ++i)
            outputs.push_back(sample_constrained(cfg, cache, *lm, rng));
    } else {
        outputs = beam_search_constrained(cfg, cache, *lm);
        if (opt.value("rerank", true)) outputs = rerank_by_lm(std::move(outputs));
        if (static_cast<int>(outputs.size()) > count) outputs.resize(count);
    }

    for (const GenOutput& out : outputs) {
        bool ok = opt.value("ordered", false)
                      ? cnf.satisfies_ordered(out.tokens,
                                              identity_order(cnf.num_clauses()),
                                              model.eos_token())
                      : cnf.satisfies(out.tokens, model.eos_token());
        if (!ok) throw InternalError("generated sequence violates the constraint");
        if (opt.value("json", false))
            std::cout << json({{"tokens", out.tokens},
                               {"fused_ll", out.fused_ll},
                               {"lm_ll", out.lm_ll}})
                             .dump()
                      << "\n";
        else
            std::cout << join_tokens(out.tokens) << "\n";
    }
    write_manifest(opt, "generate",
                   {{"model", opt.at("model").get<std::string>()},
                    {"constraints", opt.at("constraints").get<std::string>()},
                    {"lm", lm_spec_input_path(opt.at("lm").get<std::string>())}});
    return 0;
}

// ---------------------------------------------------------------------------
// eval

int run_eval(const json& opt) {
    int vocab = opt.value("vocab_size", 0);
    Token eos = opt.value("eos_token", -1);
    if (opt.contains("model") && !opt.at("model").get<std::string>().empty()) {
        Hmm model = Hmm::load(opt.at("model").get<std::string>());
        if (vocab == 0) vocab = model.vocab_size();
        if (eos < 0) eos = model.eos_token();
    }
    if (vocab < 1) throw InputError("eval needs --vocab-size or --model");
    Cnf cnf = compile_from_file(opt.at("constraints").get<std::string>(), vocab,
                                opt.value("clause_cap", kDefaultClauseCap));
    std::vector<TokenSeq> seqs =
        load_token_lines(opt.at("sequences").get<std::string>());
    if (seqs.empty()) throw InputError("no sequences to evaluate");
    std::vector<Cnf> cnfs(seqs.size(), cnf);
    double cov = coverage(seqs, cnfs, eos);
    double succ = success_rate(seqs, cnfs, eos);
    if (opt.value("json", false))
        std::cout << json({{"coverage", cov}, {"success_rate", succ}}).dump() << "\n";
    else
        std::cout << "coverage " << cov << "\nsuccess_rate " << succ << "\n";
    write_manifest(opt, "eval",
                   {{"sequences", opt.at("sequences").get<std::string>()},
                    {"constraints", opt.at("constraints").get<std::string>()}});
    return 0;
}

// ---------------------------------------------------------------------------
// oracle-check

int run_oracle_check(const json& opt) {
    Hmm model = Hmm::load(opt.at("model").get<std::string>());
    Cnf cnf = compile_from_file(opt.at("constraints").get<std::string>(),
                                model.vocab_size(),
                                opt.value("clause_cap", kDefaultClauseCap));
    const int threads = opt.at("threads").get<int>();
    int horizon = opt.value("max_len", 0);
    if (horizon == 0) horizon = model.max_len();
    DpCache cache =
        opt.value("ordered", false)
            ? DpCache::build_ordered(model, cnf, identity_order(cnf.num_clauses()),
                                     horizon, threads)
            : DpCache::build(model, cnf, horizon, threads);
    std::string dump_path = opt.value("dump_cache", "");
    if (!dump_path.empty()) {
        std::ofstream dump(dump_path);
        if (!dump) throw InputError("cannot open " + dump_path + " for writing");
        cache.dump_csv(dump);
    }
    TokenSeq prefix = parse_token_list(opt.value("prefix", ""));
    OracleReport report =
        oracle_check(cache, prefix, opt.value("next_token", false), threads);
    report.to_json(std::cout);
    write_manifest(opt, "oracle-check",
                   {{"model", opt.at("model").get<std::string>()},
                    {"constraints", opt.at("constraints").get<std::string>()}});
    return 0;
}

// ---------------------------------------------------------------------------
// compile-constraint / lm-serve / replay

int run_compile_constraint(const json& opt) {
    int vocab = opt.value("vocab_size", 0);
    if (opt.contains("model") && !opt.at("model").get<std::string>().empty())
        vocab = Hmm::load(opt.at("model").get<std::string>()).vocab_size();
    if (vocab < 1) throw InputError("compile-constraint needs --vocab-size or --model");
    Cnf cnf = compile_from_file(opt.at("constraints").get<std::string>(), vocab,
                                opt.value("clause_cap", kDefaultClauseCap));
    cnf.dump_normalized(std::cout);
    return 0;
}

int run_lm_serve(const json& opt) {
    int vocab = opt.value("vocab_size", 0);
    Token eos = opt.value("eos_token", -1);
    int max_len = opt.value("max_len", 0);
    std::unique_ptr<BaseLm> lm =
        make_lm(opt.at("lm").get<std::string>(), vocab, eos, max_len, nullptr);
    serve_lm(*lm, std::cin, std::cout);
    return 0;
}

int run_replay(const json& opt) {
    RunManifest m = RunManifest::load(opt.at("manifest").get<std::string>());
    if (m.engine_version != kEngineVersion)
        std::cerr << "warning: manifest written by engine " << m.engine_version
                  << ", this is " << kEngineVersion << "\n";
    m.verify_inputs();
    return dispatch(m.command, m.options);
}

int dispatch(const std::string& cmd, const json& opt) {
    if (cmd == "train") return run_train(opt);
    if (cmd == "distill") return run_distill(opt);
    if (cmd == "generate") return run_generate(opt);
    if (cmd == "eval") return run_eval(opt);
    if (cmd == "oracle-check") return run_oracle_check(opt);
    if (cmd == "compile-constraint") return run_compile_constraint(opt);
    if (cmd == "lm-serve") return run_lm_serve(opt);
    throw InputError("unknown command in manifest: " + cmd);
}

// ---------------------------------------------------------------------------
// argument wiring

// --config JSON file: any key not given on the command line is appended as
// --key value, so flags beat the file and the file beats defaults.
std::vector<std::string> apply_config_file(std::vector<std::string> args) {
    std::string path;
    for (size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    }
    if (path.empty()) return args;
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file " + path);
    json cfg;
    try {
        in >> cfg;
    } catch (const json::exception& e) {
        throw InputError(std::string("config parse error: ") + e.what());
    }
    if (!cfg.is_object()) throw InputError("config file must be a JSON object");
    for (const auto& [key, value] : cfg.items()) {
        std::string flag = "--" + key;
        bool present = false;
        for (const auto& a : args)
            if (a == flag || a.rfind(flag + "=", 0) == 0) present = true;
        if (present) continue;
        if (value.is_boolean()) {
            if (value.get<bool>()) args.push_back(flag);
        } else if (value.is_string()) {
            args.push_back(flag);
            args.push_back(value.get<std::string>());
        } else {
            args.push_back(flag);
            args.push_back(value.dump());
        }
    }
    return args;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"exact lexically-constrained generation with HMM guidance", "lexgen"};
    app.require_subcommand(1);
    app.fallthrough();  // --threads/--json/--config may follow the subcommand

    int threads = default_threads();
    bool as_json = false;
    std::string config_path;
    app.add_option("--threads", threads, "worker threads (default: cores)");
    app.add_flag("--json", as_json, "structured records on stdout");
    app.add_option("--config", config_path, "JSON file with default option values");

    // train
    auto* train_cmd = app.add_subcommand("train", "fit an HMM on a token corpus");
    std::string tr_corpus, tr_out, tr_metrics, tr_manifest;
    int tr_vocab = 0, tr_eos = -1, tr_states = 8, tr_maxlen = 16, tr_epochs = 10;
    double tr_smoothing = 1e-4, tr_heldout = 0.1;
    uint64_t tr_seed = 0;
    train_cmd->add_option("--corpus", tr_corpus)->required();
    train_cmd->add_option("--vocab-size", tr_vocab)->required();
    train_cmd->add_option("--eos-token", tr_eos, "default: vocab-size - 1");
    train_cmd->add_option("--states", tr_states);
    train_cmd->add_option("--max-len", tr_maxlen);
    train_cmd->add_option("--epochs", tr_epochs);
    train_cmd->add_option("--smoothing", tr_smoothing);
    train_cmd->add_option("--heldout-fraction", tr_heldout);
    train_cmd->add_option("--seed", tr_seed);
    train_cmd->add_option("--out", tr_out)->required();
    train_cmd->add_option("--metrics-out", tr_metrics);
    train_cmd->add_option("--manifest-out", tr_manifest);

    // distill
    auto* distill_cmd =
        app.add_subcommand("distill", "train a student HMM on teacher samples");
    std::string di_teacher, di_out, di_trace, di_manifest;
    int di_states = 8, di_vocab = 0, di_eos = -1, di_maxlen = 0, di_epochs = 10;
    long long di_samples = 1000, di_heldout = 1000;
    double di_smoothing = 1e-4;
    uint64_t di_seed = 0;
    bool di_noresample = false;
    distill_cmd->add_option("--teacher", di_teacher, "LM spec (hmm:/ngram:/exec:)")
        ->required();
    distill_cmd->add_option("--states", di_states);
    distill_cmd->add_option("--vocab-size", di_vocab);
    distill_cmd->add_option("--eos-token", di_eos);
    distill_cmd->add_option("--max-len", di_maxlen);
    distill_cmd->add_option("--epochs", di_epochs);
    distill_cmd->add_option("--samples-per-epoch", di_samples);
    distill_cmd->add_option("--heldout-samples", di_heldout);
    distill_cmd->add_flag("--no-resample", di_noresample,
                          "draw one corpus up front instead of per epoch");
    distill_cmd->add_option("--smoothing", di_smoothing);
    distill_cmd->add_option("--seed", di_seed);
    distill_cmd->add_option("--out", di_out)->required();
    distill_cmd->add_option("--trace-out", di_trace);
    distill_cmd->add_option("--manifest-out", di_manifest);

    // generate
    auto* gen_cmd = app.add_subcommand("generate", "constrained generation");
    std::string ge_model, ge_constraints, ge_mode = "unsupervised",
                ge_strategy = "sample", ge_lm = "self", ge_manifest;
    double ge_weight = 0.3;
    int ge_beam = 16, ge_count = 1, ge_maxlen = 0;
    uint64_t ge_seed = 0;
    bool ge_ordered = false, ge_norerank = false;
    gen_cmd->add_option("--model", ge_model)->required();
    gen_cmd->add_option("--constraints", ge_constraints)->required();
    gen_cmd->add_option("--mode", ge_mode, "unsupervised | supervised");
    gen_cmd->add_option("--weight", ge_weight, "supervised fusion weight in (0,1)");
    gen_cmd->add_option("--strategy", ge_strategy, "sample | beam");
    gen_cmd->add_option("--beam-size", ge_beam);
    gen_cmd->add_option("--count", ge_count, "samples to draw / beams to print");
    gen_cmd->add_option("--max-len", ge_maxlen, "generation horizon (default: model)");
    gen_cmd->add_option("--seed", ge_seed);
    gen_cmd->add_option("--lm", ge_lm, "base LM spec (default: self)");
    gen_cmd->add_flag("--ordered", ge_ordered,
                      "clauses must be satisfied in file order");
    gen_cmd->add_flag("--no-rerank", ge_norerank,
                      "keep beam order instead of re-ranking by LM likelihood");
    int ge_cap = kDefaultClauseCap;
    gen_cmd->add_option("--clause-cap", ge_cap,
                        "max clauses (cache cost doubles per clause)");
    gen_cmd->add_option("--manifest-out", ge_manifest);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "coverage and success rate");
    std::string ev_sequences, ev_constraints, ev_model, ev_manifest;
    int ev_vocab = 0, ev_eos = -1;
    eval_cmd->add_option("--sequences", ev_sequences)->required();
    eval_cmd->add_option("--constraints", ev_constraints)->required();
    eval_cmd->add_option("--model", ev_model, "source of vocab/EOS defaults");
    eval_cmd->add_option("--vocab-size", ev_vocab);
    eval_cmd->add_option("--eos-token", ev_eos);
    int ev_cap = kDefaultClauseCap;
    eval_cmd->add_option("--clause-cap", ev_cap);
    eval_cmd->add_option("--manifest-out", ev_manifest);

    // oracle-check
    auto* oc_cmd =
        app.add_subcommand("oracle-check", "engine vs. enumeration report");
    std::string oc_model, oc_constraints, oc_prefix, oc_dump, oc_manifest;
    int oc_maxlen = 0;
    bool oc_next = false, oc_ordered = false;
    oc_cmd->add_option("--model", oc_model)->required();
    oc_cmd->add_option("--constraints", oc_constraints)->required();
    oc_cmd->add_option("--prefix", oc_prefix, "space-separated token ids");
    oc_cmd->add_option("--max-len", oc_maxlen);
    oc_cmd->add_flag("--next-token", oc_next, "also check every next-token entry");
    oc_cmd->add_flag("--ordered", oc_ordered);
    oc_cmd->add_option("--dump-cache", oc_dump, "write the cache as CSV (debug)");
    int oc_cap = kDefaultClauseCap;
    oc_cmd->add_option("--clause-cap", oc_cap);
    oc_cmd->add_option("--manifest-out", oc_manifest);

    // compile-constraint
    auto* cc_cmd =
        app.add_subcommand("compile-constraint", "dump the normalized constraint");
    std::string cc_constraints, cc_model;
    int cc_vocab = 0;
    cc_cmd->add_option("--constraints", cc_constraints)->required();
    cc_cmd->add_option("--vocab-size", cc_vocab);
    cc_cmd->add_option("--model", cc_model);
    int cc_cap = kDefaultClauseCap;
    cc_cmd->add_option("--clause-cap", cc_cap);

    // lm-serve
    auto* ls_cmd =
        app.add_subcommand("lm-serve", "serve a base LM over the line protocol");
    std::string ls_lm;
    int ls_vocab = 0, ls_eos = -1, ls_maxlen = 0;
    ls_cmd->add_option("--lm", ls_lm)->required();
    ls_cmd->add_option("--vocab-size", ls_vocab);
    ls_cmd->add_option("--eos-token", ls_eos);
    ls_cmd->add_option("--max-len", ls_maxlen);

    // replay
    auto* rp_cmd = app.add_subcommand("replay", "re-run a saved manifest");
    std::string rp_manifest;
    rp_cmd->add_option("manifest", rp_manifest)->required();

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        args = apply_config_file(std::move(args));
        // CLI11 consumes reversed argv
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        json opt;
        std::string cmd;
        if (train_cmd->parsed()) {
            cmd = "train";
            opt = {{"corpus", tr_corpus},
                   {"vocab_size", tr_vocab},
                   {"eos_token", tr_eos < 0 ? tr_vocab - 1 : tr_eos},
                   {"states", tr_states},
                   {"max_len", tr_maxlen},
                   {"epochs", tr_epochs},
                   {"smoothing", tr_smoothing},
                   {"heldout_fraction", tr_heldout},
                   {"seed", tr_seed},
                   {"out", tr_out},
                   {"metrics_out", tr_metrics},
                   {"manifest_out", tr_manifest}};
        } else if (distill_cmd->parsed()) {
            cmd = "distill";
            opt = {{"teacher", di_teacher},
                   {"states", di_states},
                   {"vocab_size", di_vocab},
                   {"eos_token", di_eos},
                   {"max_len", di_maxlen},
                   {"epochs", di_epochs},
                   {"samples_per_epoch", di_samples},
                   {"heldout_samples", di_heldout},
                   {"no_resample", di_noresample},
                   {"smoothing", di_smoothing},
                   {"seed", di_seed},
                   {"out", di_out},
                   {"trace_out", di_trace},
                   {"manifest_out", di_manifest}};
        } else if (gen_cmd->parsed()) {
            cmd = "generate";
            opt = {{"model", ge_model},
                   {"constraints", ge_constraints},
                   {"mode", ge_mode},
                   {"weight", ge_weight},
                   {"strategy", ge_strategy},
                   {"beam_size", ge_beam},
                   {"count", ge_count},
                   {"max_len", ge_maxlen},
                   {"seed", ge_seed},
                   {"lm", ge_lm},
                   {"ordered", ge_ordered},
                   {"rerank", !ge_norerank},
                   {"clause_cap", ge_cap},
                   {"manifest_out", ge_manifest}};
        } else if (eval_cmd->parsed()) {
            cmd = "eval";
            opt = {{"sequences", ev_sequences}, {"constraints", ev_constraints},
                   {"model", ev_model},         {"vocab_size", ev_vocab},
                   {"eos_token", ev_eos},       {"clause_cap", ev_cap},
                   {"manifest_out", ev_manifest}};
        } else if (oc_cmd->parsed()) {
            cmd = "oracle-check";
            opt = {{"model", oc_model},       {"constraints", oc_constraints},
                   {"prefix", oc_prefix},     {"max_len", oc_maxlen},
                   {"next_token", oc_next},   {"ordered", oc_ordered},
                   {"dump_cache", oc_dump},   {"clause_cap", oc_cap},
                   {"manifest_out", oc_manifest}};
        } else if (cc_cmd->parsed()) {
            cmd = "compile-constraint";
            opt = {{"constraints", cc_constraints},
                   {"vocab_size", cc_vocab},
                   {"model", cc_model},
                   {"clause_cap", cc_cap}};
        } else if (ls_cmd->parsed()) {
            cmd = "lm-serve";
            opt = {{"lm", ls_lm},
                   {"vocab_size", ls_vocab},
                   {"eos_token", ls_eos},
                   {"max_len", ls_maxlen}};
        } else if (rp_cmd->parsed()) {
            return run_replay({{"manifest", rp_manifest}});
        }
        opt["threads"] = threads;
        opt["json"] = as_json;
        return dispatch(cmd, opt);
    } catch (const InternalError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 4;
    } catch (const InfeasibleError& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return 3;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const SourceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 4;
    }
}

// Python bindings for the constrained-generation engine. The surface mirrors
// the C++ API but swaps GenerationState threading for plain prefix lists,
// which is friendlier at interactive scale.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "lexgen/corpus.hpp"
#include "lexgen/decode.hpp"
#include "lexgen/dp.hpp"
#include "lexgen/hmm.hpp"
#include "lexgen/lm.hpp"
#include "lexgen/oracle.hpp"
#include "lexgen/train.hpp"

namespace py = pybind11;
using namespace lexgen;

namespace {

GenerationState state_for(const DpCache& cache, const TokenSeq& prefix) {
    GenerationState state = cache.initial_state();
    for (Token v : prefix) cache.advance_state(state, v);
    return state;
}

DecodeConfig make_config(const std::string& mode, double weight, int beam_size,
                         uint64_t seed, int threads) {
    DecodeConfig cfg;
    if (mode == "unsupervised")
        cfg.mode = FusionMode::kUnsupervised;
    else if (mode == "supervised")
        cfg.mode = FusionMode::kSupervised;
    else
        throw InputError("mode must be 'unsupervised' or 'supervised'");
    cfg.weight = weight;
    cfg.beam_size = beam_size;
    cfg.seed = seed;
    cfg.threads = threads;
    return cfg;
}

Corpus corpus_from_lists(std::vector<TokenSeq> seqs, int max_len, Token eos,
                         int vocab_size) {
    return make_corpus(std::move(seqs), max_len, eos, vocab_size);
}

py::dict output_dict(const GenOutput& out) {
    py::dict d;
    d["tokens"] = out.tokens;
    d["fused_ll"] = out.fused_ll;
    d["lm_ll"] = out.lm_ll;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "exact lexically-constrained generation with HMM guidance";
    m.attr("__version__") = "0.1.0";

    py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
    py::register_exception<InfeasibleError>(m, "InfeasibleError", PyExc_RuntimeError);
    py::register_exception<SourceError>(m, "SourceError", PyExc_RuntimeError);

    py::class_<Hmm>(m, "Hmm")
        .def(py::init<int, int, int, Token, std::vector<double>, std::vector<double>,
                      std::vector<double>>(),
             py::arg("num_states"), py::arg("vocab_size"), py::arg("max_len"),
             py::arg("eos_token"), py::arg("initial"), py::arg("transition"),
             py::arg("emission"))
        .def_property_readonly("num_states", &Hmm::num_states)
        .def_property_readonly("vocab_size", &Hmm::vocab_size)
        .def_property_readonly("max_len", &Hmm::max_len)
        .def_property_readonly("eos_token", &Hmm::eos_token)
        .def("validate", &Hmm::validate)
        .def("absorbing_states", &Hmm::absorbing_states)
        .def("forward_pass", &Hmm::forward_pass, py::arg("prefix"))
        .def("prefix_logprob", &Hmm::prefix_logprob, py::arg("prefix"))
        .def("sample_sequence",
             py::overload_cast<uint64_t>(&Hmm::sample_sequence, py::const_),
             py::arg("seed"))
        .def("save", &Hmm::save, py::arg("path"))
        .def_static("load", &Hmm::load, py::arg("path"));

    m.def("random_hmm", &random_hmm, py::arg("num_states"), py::arg("vocab_size"),
          py::arg("max_len"), py::arg("eos_token"), py::arg("seed"));
    m.def("make_eos_absorbing", &make_eos_absorbing, py::arg("hmm"));

    py::class_<Cnf>(m, "Cnf")
        .def_static(
            "compile",
            [](std::vector<std::vector<TokenSeq>> clauses, std::vector<Token> separators,
               int vocab_size, int clause_cap) {
                CnfSpec spec{std::move(clauses), std::move(separators)};
                return Cnf::compile(spec, vocab_size, clause_cap);
            },
            py::arg("clauses"), py::arg("separators"), py::arg("vocab_size"),
            py::arg("clause_cap") = kDefaultClauseCap)
        .def_property_readonly("num_clauses", &Cnf::num_clauses)
        .def_property_readonly("keystrings", &Cnf::keystrings)
        .def("satisfies", &Cnf::satisfies, py::arg("sequence"), py::arg("eos") = -1)
        .def("satisfies_ordered", &Cnf::satisfies_ordered, py::arg("sequence"),
             py::arg("order"), py::arg("eos") = -1)
        .def("suffix_continuations", &Cnf::suffix_continuations, py::arg("text"));

    m.def("load_constraint_file", [](const std::string& path, int vocab_size) {
        return Cnf::compile(load_constraint_file(path), vocab_size);
    });

    py::class_<DpCache>(m, "DpCache")
        .def_static("build", &DpCache::build, py::arg("hmm"), py::arg("cnf"),
                    py::arg("horizon") = 0, py::arg("threads") = 1)
        .def_static("build_ordered", &DpCache::build_ordered, py::arg("hmm"),
                    py::arg("cnf"), py::arg("order"), py::arg("horizon") = 0,
                    py::arg("threads") = 1)
        .def_property_readonly("horizon", &DpCache::horizon)
        .def_property_readonly("mask_count", &DpCache::mask_count)
        .def(
            "joint_with_constraint",
            [](const DpCache& cache, const TokenSeq& prefix) {
                return cache.joint_with_constraint(state_for(cache, prefix));
            },
            py::arg("prefix"))
        .def(
            "next_token_joint",
            [](const DpCache& cache, const TokenSeq& prefix) {
                return cache.next_token_joint(state_for(cache, prefix));
            },
            py::arg("prefix"));

    py::class_<BaseLm, std::shared_ptr<BaseLm>>(m, "BaseLm")
        .def_property_readonly("vocab_size", &BaseLm::vocab_size)
        .def("next_logprobs", &BaseLm::next_logprobs, py::arg("prefix"))
        .def("sample", &BaseLm::sample, py::arg("seed"), py::arg("max_len"));

    m.def(
        "hmm_lm",
        [](const Hmm& hmm) -> std::shared_ptr<BaseLm> {
            return std::make_shared<HmmLm>(hmm);
        },
        py::arg("hmm"));
    m.def(
        "ngram_lm",
        [](std::vector<TokenSeq> seqs, int max_len, Token eos, int vocab_size,
           int order, double smoothing) -> std::shared_ptr<BaseLm> {
            Corpus corpus = corpus_from_lists(std::move(seqs), max_len, eos, vocab_size);
            return std::make_shared<NgramLm>(NgramLm::fit(corpus, order, smoothing));
        },
        py::arg("sequences"), py::arg("max_len"), py::arg("eos_token"),
        py::arg("vocab_size"), py::arg("order"), py::arg("smoothing"));
    m.def(
        "external_lm",
        [](const std::string& command, int vocab_size) -> std::shared_ptr<BaseLm> {
            return std::make_shared<ExternalLm>(command, vocab_size);
        },
        py::arg("command"), py::arg("vocab_size"));

    m.def(
        "fused_next",
        [](const DpCache& cache, const TokenSeq& prefix, BaseLm& lm,
           const std::string& mode, double weight) {
            DecodeConfig cfg = make_config(mode, weight, 1, 0, 1);
            return fused_next(cfg, cache, state_for(cache, prefix), lm);
        },
        py::arg("cache"), py::arg("prefix"), py::arg("lm"),
        py::arg("mode") = "unsupervised", py::arg("weight") = 0.3);

    m.def(
        "sample_constrained",
        [](const DpCache& cache, BaseLm& lm, int count, uint64_t seed,
           const std::string& mode, double weight) {
            DecodeConfig cfg = make_config(mode, weight, 1, seed, 1);
            Rng rng(seed);
            py::list out;
            for (int i = 0; i < count; ++i)
                out.append(output_dict(sample_constrained(cfg, cache, lm, rng)));
            return out;
        },
        py::arg("cache"), py::arg("lm"), py::arg("count") = 1, py::arg("seed") = 0,
        py::arg("mode") = "unsupervised", py::arg("weight") = 0.3);

    m.def(
        "beam_search_constrained",
        [](const DpCache& cache, BaseLm& lm, int beam_size, const std::string& mode,
           double weight, bool rerank) {
            DecodeConfig cfg = make_config(mode, weight, beam_size, 0, 1);
            cfg.strategy = Strategy::kBeam;
            std::vector<GenOutput> beams = beam_search_constrained(cfg, cache, lm);
            if (rerank) beams = rerank_by_lm(std::move(beams));
            py::list out;
            for (const GenOutput& b : beams) out.append(output_dict(b));
            return out;
        },
        py::arg("cache"), py::arg("lm"), py::arg("beam_size") = 16,
        py::arg("mode") = "unsupervised", py::arg("weight") = 0.3,
        py::arg("rerank") = true);

    m.def(
        "em_step",
        [](const Hmm& hmm, std::vector<TokenSeq> seqs, double smoothing, int threads) {
            Corpus corpus = corpus_from_lists(std::move(seqs), hmm.max_len(),
                                              hmm.eos_token(), hmm.vocab_size());
            return em_step(hmm, corpus, smoothing, threads);
        },
        py::arg("hmm"), py::arg("sequences"), py::arg("smoothing") = 0.0,
        py::arg("threads") = 1);

    m.def(
        "distill",
        [](BaseLm& teacher, const Hmm& student, int epochs, long long samples_per_epoch,
           long long heldout_samples, double smoothing, uint64_t seed, int threads) {
            TrainConfig cfg;
            cfg.epochs = epochs;
            cfg.samples_per_epoch = samples_per_epoch;
            cfg.heldout_samples = heldout_samples;
            cfg.smoothing = smoothing;
            cfg.seed = seed;
            cfg.threads = threads;
            DistillResult res = distill(teacher, student, cfg);
            py::list trace;
            for (const EpochMetric& e : res.trace) {
                py::dict d;
                d["epoch"] = e.epoch;
                d["train_ll"] = e.train_ll;
                d["heldout_ll"] = e.heldout_ll;
                trace.append(d);
            }
            return py::make_tuple(res.model, trace);
        },
        py::arg("teacher"), py::arg("student"), py::arg("epochs"),
        py::arg("samples_per_epoch"), py::arg("heldout_samples") = 1000,
        py::arg("smoothing") = 1e-4, py::arg("seed") = 0, py::arg("threads") = 1);

    m.def("brute_joint", &brute_joint, py::arg("hmm"), py::arg("cnf"),
          py::arg("prefix"), py::arg("horizon") = 0, py::arg("threads") = 1);
    m.def("brute_joint_ordered", &brute_joint_ordered, py::arg("hmm"), py::arg("cnf"),
          py::arg("order"), py::arg("prefix"), py::arg("horizon") = 0,
          py::arg("threads") = 1);
    m.def(
        "coverage",
        [](const std::vector<TokenSeq>& seqs, const std::vector<Cnf>& cnfs, Token eos) {
            return coverage(seqs, cnfs, eos);
        },
        py::arg("sequences"), py::arg("cnfs"), py::arg("eos") = -1);
    m.def(
        "success_rate",
        [](const std::vector<TokenSeq>& seqs, const std::vector<Cnf>& cnfs, Token eos) {
            return success_rate(seqs, cnfs, eos);
        },
        py::arg("sequences"), py::arg("cnfs"), py::arg("eos") = -1);
}

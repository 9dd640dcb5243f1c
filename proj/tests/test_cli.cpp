#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lexgen/hmm.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code;
    std::string out;
};

RunResult run(const std::string& args) {
    std::string cmd = std::string(LEXGEN_CLI_PATH) + " " + args + " 2>/tmp/lexgen_cli_err";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string out;
    char buf[4096];
    size_t got;
    while ((got = fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, got);
    int status = pclose(pipe);
    return {WEXITSTATUS(status), out};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Workdir {
    fs::path dir;
    Workdir() {
        dir = fs::temp_directory_path() /
              ("lexgen_cli_test_" + std::to_string(::getpid()) + "_" +
               std::to_string(counter()++));
        fs::create_directories(dir);
    }
    ~Workdir() { fs::remove_all(dir); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const std::string& name, const std::string& content) const {
        fs::path p = dir / name;
        std::ofstream out(p);
        out << content;
        return p.string();
    }
    std::string path(const std::string& name) const { return (dir / name).string(); }
};

// a small corpus with enough structure for the n-gram tests
std::string corpus_text() {
    std::ostringstream out;
    for (int i = 0; i < 60; ++i) {
        out << (i % 3) << " " << (i % 2 ? "1 2" : "2 1") << " " << (i % 4) << "\n";
    }
    return out.str();
}

constexpr const char* kConstraint = R"({"clauses": [[[1, 2], [3]], [[0]]]})";

}  // namespace

TEST_CASE("train writes a model, metrics, and reproduces bit-exactly") {
    Workdir wd;
    std::string corpus = wd.file("corpus.txt", corpus_text());
    std::string args = "train --corpus " + corpus +
                       " --vocab-size 6 --states 4 --max-len 6 --epochs 4 --seed 5"
                       " --metrics-out " +
                       wd.path("metrics.jsonl") + " --out ";
    RunResult r1 = run(args + wd.path("m1.glt"));
    CHECK(r1.code == 0);
    RunResult r2 = run(args + wd.path("m2.glt"));
    CHECK(r2.code == 0);
    CHECK(slurp(wd.path("m1.glt")) == slurp(wd.path("m2.glt")));

    lexgen::Hmm model = lexgen::Hmm::load(wd.path("m1.glt"));
    model.validate();
    CHECK(model.num_states() == 4);
    CHECK(!model.absorbing_states().empty());

    // metrics: one JSON record per epoch, with non-decreasing train ll
    std::ifstream metrics(wd.path("metrics.jsonl"));
    std::string line;
    int epochs = 0;
    double prev = -1e300;
    while (std::getline(metrics, line)) {
        json rec = json::parse(line);
        CHECK(rec.at("epoch").get<int>() == ++epochs);
        double ll = rec.at("train_ll").get<double>();
        CHECK(ll >= prev - 1e-6);
        prev = ll;
    }
    CHECK(epochs == 4);
}

TEST_CASE("replaying a train manifest reproduces the model file") {
    Workdir wd;
    std::string corpus = wd.file("corpus.txt", corpus_text());
    REQUIRE(run("train --corpus " + corpus +
                " --vocab-size 6 --states 3 --max-len 6 --epochs 2 --seed 12"
                " --threads 2 --manifest-out " +
                wd.path("manifest.json") + " --out " + wd.path("m.glt"))
                .code == 0);
    std::string trained = slurp(wd.path("m.glt"));
    fs::remove(wd.path("m.glt"));
    REQUIRE(run("replay " + wd.path("manifest.json")).code == 0);
    CHECK(slurp(wd.path("m.glt")) == trained);
}

TEST_CASE("json and binary model formats are interchangeable") {
    Workdir wd;
    std::string corpus = wd.file("corpus.txt", corpus_text());
    CHECK(run("train --corpus " + corpus +
              " --vocab-size 6 --states 3 --max-len 6 --epochs 2 --seed 1 --out " +
              wd.path("m.json"))
              .code == 0);
    lexgen::Hmm from_json = lexgen::Hmm::load(wd.path("m.json"));
    from_json.save_binary(wd.path("m.glt"));
    lexgen::Hmm from_bin = lexgen::Hmm::load(wd.path("m.glt"));
    CHECK(from_bin.num_states() == from_json.num_states());
    CHECK(from_bin.emission(0, 0) == from_json.emission(0, 0));
}

TEST_CASE("generate: constrained outputs, determinism, manifest replay") {
    Workdir wd;
    std::string corpus = wd.file("corpus.txt", corpus_text());
    REQUIRE(run("train --corpus " + corpus +
                " --vocab-size 6 --states 4 --max-len 8 --epochs 3 --seed 2 --out " +
                wd.path("m.glt"))
                .code == 0);
    std::string constraints = wd.file("cnf.json", kConstraint);

    std::string gen_args = "generate --model " + wd.path("m.glt") + " --constraints " +
                           constraints + " --count 8 --seed 11 --manifest-out " +
                           wd.path("manifest.json");
    RunResult gen = run(gen_args);
    REQUIRE(gen.code == 0);

    // every emitted line satisfies the constraint
    std::string seqs = wd.file("gen.txt", gen.out);
    RunResult ev = run("--json eval --sequences " + seqs + " --constraints " +
                       constraints + " --model " + wd.path("m.glt"));
    REQUIRE(ev.code == 0);
    json metrics = json::parse(ev.out);
    CHECK(metrics.at("coverage").get<double>() == 1.0);
    CHECK(metrics.at("success_rate").get<double>() == 1.0);

    // the same invocation and a manifest replay are byte-identical
    CHECK(run(gen_args).out == gen.out);
    RunResult replay = run("replay " + wd.path("manifest.json"));
    CHECK(replay.code == 0);
    CHECK(replay.out == gen.out);

    // a corrupted input makes the replay refuse to run
    std::ofstream(wd.path("cnf.json"), std::ios::app) << "\n";
    CHECK(run("replay " + wd.path("manifest.json")).code == 2);
}

TEST_CASE("generate: beam strategy and structured output") {
    Workdir wd;
    std::string corpus = wd.file("corpus.txt", corpus_text());
    REQUIRE(run("train --corpus " + corpus +
                " --vocab-size 6 --states 3 --max-len 8 --epochs 3 --seed 3 --out " +
                wd.path("m.glt"))
                .code == 0);
    std::string constraints = wd.file("cnf.json", kConstraint);
    RunResult beams =
        run("--json generate --model " + wd.path("m.glt") + " --constraints " +
            constraints + " --strategy beam --beam-size 8 --count 3");
    REQUIRE(beams.code == 0);
    std::istringstream lines(beams.out);
    std::string line;
    int count = 0;
    double prev_lm = 1e300;
    while (std::getline(lines, line)) {
        json rec = json::parse(line);
        CHECK(rec.contains("tokens"));
        CHECK(rec.contains("fused_ll"));
        // re-ranked by LM likelihood, best first
        double lm_ll = rec.at("lm_ll").get<double>();
        CHECK(lm_ll <= prev_lm + 1e-12);
        prev_lm = lm_ll;
        ++count;
    }
    CHECK(count == 3);

    // beam size 1 is deterministic greedy decoding
    std::string greedy_args = "generate --model " + wd.path("m.glt") +
                              " --constraints " + constraints +
                              " --strategy beam --beam-size 1 --count 1";
    CHECK(run(greedy_args).out == run(greedy_args).out);
}

TEST_CASE("ordered generation respects the clause order") {
    Workdir wd;
    std::string corpus = wd.file("corpus.txt", corpus_text());
    REQUIRE(run("train --corpus " + corpus +
                " --vocab-size 6 --states 4 --max-len 8 --epochs 3 --seed 4 --out " +
                wd.path("m.glt"))
                .code == 0);
    std::string constraints = wd.file("cnf.json", R"({"clauses": [[[2]], [[0]]]})");
    RunResult gen = run("generate --model " + wd.path("m.glt") + " --constraints " +
                        constraints + " --ordered --count 10 --seed 7");
    REQUIRE(gen.code == 0);
    std::istringstream lines(gen.out);
    std::string line;
    while (std::getline(lines, line)) {
        // some occurrence of 2 must precede some occurrence of 0
        std::istringstream toks(line);
        std::vector<int> seq;
        int v;
        while (toks >> v) seq.push_back(v);
        bool seen2 = false, in_order = false;
        for (int tok : seq) {
            if (tok == 2) seen2 = true;
            if (tok == 0 && seen2) in_order = true;
        }
        CHECK(in_order);
    }
}

TEST_CASE("distill trains against a teacher model reproducibly") {
    Workdir wd;
    std::string corpus = wd.file("corpus.txt", corpus_text());
    REQUIRE(run("train --corpus " + corpus +
                " --vocab-size 6 --states 4 --max-len 8 --epochs 4 --seed 21 --out " +
                wd.path("teacher.glt"))
                .code == 0);
    std::string args = "distill --teacher hmm:" + wd.path("teacher.glt") +
                       " --states 4 --epochs 3 --samples-per-epoch 300"
                       " --heldout-samples 300 --seed 5 --trace-out " +
                       wd.path("trace.jsonl") + " --out ";
    REQUIRE(run(args + wd.path("s1.glt")).code == 0);
    REQUIRE(run(args + wd.path("s2.glt")).code == 0);
    CHECK(slurp(wd.path("s1.glt")) == slurp(wd.path("s2.glt")));  // seed-reproducible

    // trace schema: one record per epoch with the expected fields
    std::ifstream trace(wd.path("trace.jsonl"));
    std::string line;
    int epochs = 0;
    double first = 0.0, last = 0.0;
    while (std::getline(trace, line)) {
        json rec = json::parse(line);
        CHECK(rec.at("epoch").get<int>() == ++epochs);
        last = rec.at("heldout_ll").get<double>();
        if (epochs == 1) first = last;
        CHECK(rec.contains("train_ll"));
    }
    CHECK(epochs == 3);
    // self-capacity distillation should not lose ground on held-out data
    CHECK(last >= first - 0.2);
    lexgen::Hmm student = lexgen::Hmm::load(wd.path("s1.glt"));
    student.validate();
}

TEST_CASE("eval reports partial coverage") {
    Workdir wd;
    std::string constraints = wd.file("cnf.json", R"({"clauses": [[[1]], [[2]]]})");
    std::string seqs = wd.file("seqs.txt", "1 2 3\n1 3 3\n");
    RunResult ev = run("--json eval --sequences " + seqs + " --constraints " +
                       constraints + " --vocab-size 6 --eos-token 5");
    REQUIRE(ev.code == 0);
    json m = json::parse(ev.out);
    CHECK(m.at("coverage").get<double>() == doctest::Approx(0.75));
    CHECK(m.at("success_rate").get<double>() == doctest::Approx(0.5));
}

TEST_CASE("oracle-check emits a clean report and a cache dump") {
    Workdir wd;
    std::string corpus = wd.file("corpus.txt", corpus_text());
    REQUIRE(run("train --corpus " + corpus +
                " --vocab-size 6 --states 3 --max-len 6 --epochs 2 --seed 6 --out " +
                wd.path("m.glt"))
                .code == 0);
    std::string constraints = wd.file("cnf.json", kConstraint);
    RunResult oc = run("oracle-check --model " + wd.path("m.glt") + " --constraints " +
                       constraints + " --prefix '1 2' --next-token --dump-cache " +
                       wd.path("cache.csv"));
    REQUIRE(oc.code == 0);
    json report = json::parse(oc.out);
    CHECK(report.at("max_abs_error").get<double>() < 1e-8);
    CHECK(report.at("queries").size() == 7);  // joint + 6 next-token entries
    std::string dump = slurp(wd.path("cache.csv"));
    CHECK(dump.rfind("l,suffix,mask,z,logprob", 0) == 0);
}

TEST_CASE("compile-constraint dumps the normalized form") {
    Workdir wd;
    std::string constraints =
        wd.file("cnf.json", R"({"clauses": [[[1]]], "separators": [2, 3]})");
    RunResult cc = run("compile-constraint --constraints " + constraints +
                       " --vocab-size 6");
    REQUIRE(cc.code == 0);
    json dump = json::parse(cc.out);
    CHECK(dump.at("keystrings").size() == 2);  // [1,2] and [1,3]
}

TEST_CASE("config file values yield to explicit flags") {
    Workdir wd;
    std::string corpus = wd.file("corpus.txt", corpus_text());
    std::string cfg = wd.file("cfg.json", R"({"states": 3, "epochs": 2})");
    std::string base = "train --corpus " + corpus +
                       " --vocab-size 6 --max-len 6 --seed 1 --config " + cfg;
    REQUIRE(run(base + " --out " + wd.path("a.glt")).code == 0);
    CHECK(lexgen::Hmm::load(wd.path("a.glt")).num_states() == 3);
    REQUIRE(run(base + " --states 5 --out " + wd.path("b.glt")).code == 0);
    CHECK(lexgen::Hmm::load(wd.path("b.glt")).num_states() == 5);
}

TEST_CASE("exit codes distinguish input, infeasible, and usage errors") {
    Workdir wd;
    CHECK(run("generate --model /nonexistent --constraints /nonexistent").code == 2);
    CHECK(run("frobnicate").code == 2);
    CHECK(run("train --corpus missing.txt --vocab-size 4 --out x.glt").code == 2);

    std::string corpus = wd.file("corpus.txt", corpus_text());
    REQUIRE(run("train --corpus " + corpus +
                " --vocab-size 6 --states 3 --max-len 4 --epochs 1 --seed 1 --out " +
                wd.path("m.glt"))
                .code == 0);
    // five tokens cannot fit in a four-token horizon
    std::string constraints = wd.file("cnf.json", R"({"clauses": [[[0,0,1,1,0]]]})");
    CHECK(run("generate --model " + wd.path("m.glt") + " --constraints " + constraints)
              .code == 3);
}

TEST_CASE("the external bridge round-trips through lm-serve") {
    Workdir wd;
    std::string corpus = wd.file("corpus.txt", corpus_text());
    REQUIRE(run("train --corpus " + corpus +
                " --vocab-size 6 --states 3 --max-len 8 --epochs 2 --seed 8 --out " +
                wd.path("m.glt"))
                .code == 0);
    std::string constraints = wd.file("cnf.json", kConstraint);
    std::string serve = std::string(LEXGEN_CLI_PATH) + " lm-serve --lm hmm:" +
                        wd.path("m.glt");
    RunResult bridged = run("generate --model " + wd.path("m.glt") + " --constraints " +
                            constraints + " --count 5 --seed 9 --lm 'exec:" + serve +
                            "'");
    REQUIRE(bridged.code == 0);
    std::string seqs = wd.file("gen.txt", bridged.out);
    RunResult ev = run("--json eval --sequences " + seqs + " --constraints " +
                       constraints + " --model " + wd.path("m.glt"));
    json m = json::parse(ev.out);
    CHECK(m.at("success_rate").get<double>() == 1.0);

    // scores served over the protocol equal in-process scoring exactly
    RunResult direct = run("generate --model " + wd.path("m.glt") + " --constraints " +
                           constraints + " --count 5 --seed 9 --lm hmm:" +
                           wd.path("m.glt"));
    CHECK(bridged.out == direct.out);
}

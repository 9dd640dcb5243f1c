#include "lexgen/hmm.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lexgen/errors.hpp"
#include "lexgen/logspace.hpp"
#include <json.hpp>

namespace lexgen {

static_assert(std::endian::native == std::endian::little,
              "binary model format assumes a little-endian host");

namespace {

constexpr double kRowTol = 1e-9;

void check_row(std::span<const double> row, const char* what) {
    double s = 0.0;
    for (double v : row) {
        if (std::isnan(v) || v > 1e-12)
            throw InputError(std::string(what) + ": entry above log(1)");
        s += std::exp(v);
    }
    if (std::abs(s - 1.0) > kRowTol)
        throw InputError(std::string(what) + ": row sums to " + std::to_string(s));
}

}  // namespace

bool eos_legal(const TokenSeq& seq, Token eos) {
    bool seen = false;
    for (Token v : seq) {
        if (seen && v != eos) return false;
        if (v == eos) seen = true;
    }
    return true;
}

Hmm::Hmm(int num_states, int vocab_size, int max_len, Token eos_token,
         std::vector<double> initial, std::vector<double> transition,
         std::vector<double> emission)
    : h_(num_states),
      vocab_(vocab_size),
      n_(max_len),
      eos_(eos_token),
      initial_(std::move(initial)),
      transition_(std::move(transition)),
      emission_(std::move(emission)) {
    if (h_ < 1) throw InputError("Hmm: num_states must be positive");
    if (vocab_ < 1) throw InputError("Hmm: vocab_size must be positive");
    if (n_ < 1) throw InputError("Hmm: max_len must be positive");
    if (eos_ < 0 || eos_ >= vocab_) throw InputError("Hmm: eos_token out of range");
    if (initial_.size() != static_cast<size_t>(h_) ||
        transition_.size() != static_cast<size_t>(h_) * h_ ||
        emission_.size() != static_cast<size_t>(h_) * vocab_)
        throw InputError("Hmm: parameter vector size mismatch");
}

void Hmm::validate() const {
    check_row(initial_row(), "initial");
    for (int z = 0; z < h_; ++z) {
        check_row(transition_row(z), "transition");
        check_row(emission_row(z), "emission");
    }
}

std::vector<int> Hmm::absorbing_states() const {
    constexpr double tol = 1e-9;
    std::vector<bool> in_a(h_, false);
    for (int z = 0; z < h_; ++z)
        in_a[z] = std::exp(emission(z, eos_)) >= 1.0 - tol;
    // closure: absorbing states may only reach absorbing states
    for (int z = 0; z < h_; ++z) {
        if (!in_a[z]) continue;
        double mass_in_a = kNegInf;
        for (int z2 = 0; z2 < h_; ++z2)
            if (in_a[z2]) mass_in_a = log_add(mass_in_a, transition(z, z2));
        if (std::exp(mass_in_a) < 1.0 - tol) return {};
    }
    // EOS must be unemittable outside the absorbing set
    std::vector<int> out;
    for (int z = 0; z < h_; ++z) {
        if (in_a[z])
            out.push_back(z);
        else if (emission(z, eos_) != kNegInf)
            return {};
    }
    return out;
}

bool Hmm::has_eos_structure() const {
    if (!absorbing_states().empty()) return true;
    for (int z = 0; z < h_; ++z)
        if (emission(z, eos_) != kNegInf) return false;
    return true;  // EOS never emitted: the text window is the whole sequence
}

void Hmm::check_token(Token v) const {
    if (v < 0 || v >= vocab_)
        throw InputError("token id " + std::to_string(v) + " outside vocabulary of " +
                         std::to_string(vocab_));
}

std::vector<std::vector<double>> Hmm::forward_pass(const TokenSeq& prefix) const {
    if (prefix.empty()) throw InputError("forward_pass: empty prefix");
    if (prefix.size() > static_cast<size_t>(n_))
        throw InputError("forward_pass: prefix longer than max_len");
    std::vector<std::vector<double>> out;
    out.reserve(prefix.size());
    std::vector<double> f;
    for (Token v : prefix) {
        f = forward_step(f, v);
        out.push_back(f);
    }
    return out;
}

std::vector<double> Hmm::forward_step(const std::vector<double>& fwd, Token v) const {
    check_token(v);
    std::vector<double> next(h_);
    if (fwd.empty()) {
        for (int z = 0; z < h_; ++z) next[z] = initial_[z] + emission(z, v);
        return next;
    }
    if (fwd.size() != static_cast<size_t>(h_))
        throw InternalError("forward_step: vector size mismatch");
    for (int z2 = 0; z2 < h_; ++z2) {
        double m = kNegInf;
        for (int z = 0; z < h_; ++z) {
            double t = fwd[z] + transition_[z * h_ + z2];
            if (t > m) m = t;
        }
        if (m == kNegInf) {
            next[z2] = kNegInf;
            continue;
        }
        double s = 0.0;
        for (int z = 0; z < h_; ++z) s += std::exp(fwd[z] + transition_[z * h_ + z2] - m);
        next[z2] = m + std::log(s) + emission(z2, v);
    }
    return next;
}

double Hmm::prefix_logprob(const TokenSeq& prefix) const {
    if (prefix.empty()) return 0.0;
    if (prefix.size() > static_cast<size_t>(n_))
        throw InputError("prefix_logprob: prefix longer than max_len");
    std::vector<double> f;
    for (Token v : prefix) f = forward_step(f, v);
    return log_sum_exp(f);
}

TokenSeq Hmm::sample_sequence(Rng& rng) const {
    TokenSeq seq(n_);
    std::vector<double> w(std::max(h_, vocab_));
    auto draw = [&](std::span<const double> logp, size_t size) {
        for (size_t i = 0; i < size; ++i)
            w[i] = logp[i] == kNegInf ? 0.0 : std::exp(logp[i]);
        return rng.categorical(std::span<const double>(w.data(), size));
    };
    int z = static_cast<int>(draw(initial_row(), h_));
    seq[0] = static_cast<Token>(draw(emission_row(z), vocab_));
    for (int t = 1; t < n_; ++t) {
        z = static_cast<int>(draw(transition_row(z), h_));
        seq[t] = static_cast<Token>(draw(emission_row(z), vocab_));
    }
    return seq;
}

TokenSeq Hmm::sample_sequence(uint64_t seed) const {
    Rng rng(seed);
    return sample_sequence(rng);
}

// --- serialization ---------------------------------------------------------

namespace {

std::vector<double> to_linear(std::span<const double> logs) {
    std::vector<double> out(logs.size());
    for (size_t i = 0; i < logs.size(); ++i)
        out[i] = logs[i] == kNegInf ? 0.0 : std::exp(logs[i]);
    return out;
}

std::vector<double> to_log(const std::vector<double>& lin, const char* what) {
    std::vector<double> out(lin.size());
    for (size_t i = 0; i < lin.size(); ++i) {
        if (lin[i] < 0.0 || std::isnan(lin[i]))
            throw InputError(std::string(what) + ": negative probability");
        out[i] = lin[i] == 0.0 ? kNegInf : std::log(lin[i]);
    }
    return out;
}

}  // namespace

void Hmm::save_json(std::ostream& out) const {
    nlohmann::json j;
    j["version"] = 1;
    j["h"] = h_;
    j["V"] = vocab_;
    j["n"] = n_;
    j["eos_token"] = eos_;
    j["initial"] = to_linear(initial_);
    nlohmann::json tr = nlohmann::json::array();
    for (int z = 0; z < h_; ++z) tr.push_back(to_linear(transition_row(z)));
    j["transition"] = std::move(tr);
    nlohmann::json em = nlohmann::json::array();
    for (int z = 0; z < h_; ++z) em.push_back(to_linear(emission_row(z)));
    j["emission"] = std::move(em);
    out << j.dump(2) << "\n";
}

Hmm Hmm::load_json(std::istream& in) {
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("model JSON parse error: ") + e.what());
    }
    try {
        if (j.at("version").get<int>() != 1) throw InputError("unsupported model version");
        int h = j.at("h").get<int>();
        int vocab = j.at("V").get<int>();
        int n = j.at("n").get<int>();
        Token eos = j.at("eos_token").get<Token>();
        auto initial = to_log(j.at("initial").get<std::vector<double>>(), "initial");
        std::vector<double> transition, emission;
        for (const auto& row : j.at("transition")) {
            auto r = to_log(row.get<std::vector<double>>(), "transition");
            transition.insert(transition.end(), r.begin(), r.end());
        }
        for (const auto& row : j.at("emission")) {
            auto r = to_log(row.get<std::vector<double>>(), "emission");
            emission.insert(emission.end(), r.begin(), r.end());
        }
        return Hmm(h, vocab, n, eos, std::move(initial), std::move(transition),
                   std::move(emission));
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("model JSON schema error: ") + e.what());
    }
}

namespace {

constexpr char kMagic[4] = {'G', 'L', 'T', '1'};

void write_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw InputError("binary model: truncated header");
    return v;
}

void write_f64s(std::ostream& out, std::span<const double> xs) {
    out.write(reinterpret_cast<const char*>(xs.data()),
              static_cast<std::streamsize>(xs.size() * sizeof(double)));
}

std::vector<double> read_f64s(std::istream& in, size_t count) {
    std::vector<double> xs(count);
    in.read(reinterpret_cast<char*>(xs.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw InputError("binary model: truncated parameter block");
    return xs;
}

}  // namespace

void Hmm::save_binary(std::ostream& out) const {
    out.write(kMagic, 4);
    write_u32(out, 1);  // version
    write_u32(out, static_cast<uint32_t>(h_));
    write_u32(out, static_cast<uint32_t>(vocab_));
    write_u32(out, static_cast<uint32_t>(n_));
    write_u32(out, static_cast<uint32_t>(eos_));
    // Log-space doubles straight from the internal representation; round-trips
    // are plain memcpy and therefore bit-exact (-inf encodes probability 0).
    write_f64s(out, initial_);
    write_f64s(out, transition_);
    write_f64s(out, emission_);
}

Hmm Hmm::load_binary(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw InputError("binary model: bad magic bytes");
    if (read_u32(in) != 1) throw InputError("binary model: unsupported version");
    int h = static_cast<int>(read_u32(in));
    int vocab = static_cast<int>(read_u32(in));
    int n = static_cast<int>(read_u32(in));
    Token eos = static_cast<Token>(read_u32(in));
    if (h < 1 || vocab < 1 || n < 1 || h > (1 << 20) || vocab > (1 << 24))
        throw InputError("binary model: implausible header");
    auto initial = read_f64s(in, h);
    auto transition = read_f64s(in, static_cast<size_t>(h) * h);
    auto emission = read_f64s(in, static_cast<size_t>(h) * vocab);
    for (const auto* block : {&initial, &transition, &emission})
        for (double v : *block)
            if (std::isnan(v) || v > 0.0)
                throw InputError("binary model: entry is not a log-probability");
    return Hmm(h, vocab, n, eos, std::move(initial), std::move(transition),
               std::move(emission));
}

void Hmm::save_json(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw InputError("cannot open " + path + " for writing");
    save_json(out);
}

void Hmm::save_binary(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open " + path + " for writing");
    save_binary(out);
}

void Hmm::save(const std::string& path) const {
    if (path.size() >= 5 && path.substr(path.size() - 5) == ".json")
        save_json(path);
    else
        save_binary(path);
}

Hmm Hmm::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open model file " + path);
    char magic[4] = {0, 0, 0, 0};
    in.read(magic, 4);
    in.seekg(0);
    if (std::memcmp(magic, kMagic, 4) == 0) return load_binary(in);
    return load_json(in);
}

// --- constructions ---------------------------------------------------------

Hmm random_hmm(int num_states, int vocab_size, int max_len, Token eos_token,
               uint64_t seed) {
    Rng rng(seed);
    std::vector<double> initial = rng.log_simplex(num_states);
    std::vector<double> transition, emission;
    transition.reserve(static_cast<size_t>(num_states) * num_states);
    emission.reserve(static_cast<size_t>(num_states) * vocab_size);
    for (int z = 0; z < num_states; ++z) {
        auto r = rng.log_simplex(num_states);
        transition.insert(transition.end(), r.begin(), r.end());
    }
    for (int z = 0; z < num_states; ++z) {
        auto r = rng.log_simplex(vocab_size);
        emission.insert(emission.end(), r.begin(), r.end());
    }
    return Hmm(num_states, vocab_size, max_len, eos_token, std::move(initial),
               std::move(transition), std::move(emission));
}

Hmm make_eos_absorbing(const Hmm& hmm) {
    const int h = hmm.num_states();
    const int vocab = hmm.vocab_size();
    const Token eos = hmm.eos_token();
    if (h < 2)
        throw InputError("make_eos_absorbing: need at least 2 states to reserve one");
    const int a = h - 1;  // absorbing state

    std::vector<double> initial(hmm.initial_row().begin(), hmm.initial_row().end());
    std::vector<double> transition(hmm.transition_matrix().begin(),
                                   hmm.transition_matrix().end());
    std::vector<double> emission;
    emission.reserve(static_cast<size_t>(h) * vocab);
    for (int z = 0; z < h; ++z) {
        auto row = hmm.emission_row(z);
        if (z == a) {
            for (Token v = 0; v < vocab; ++v)
                emission.push_back(v == eos ? 0.0 : kNegInf);
            continue;
        }
        // strip EOS mass and renormalize; a row that was all EOS
        // falls back to uniform over the rest of the vocabulary
        double eos_mass = std::exp(row[eos]);
        double rest = 1.0 - eos_mass;
        for (Token v = 0; v < vocab; ++v) {
            if (v == eos) {
                emission.push_back(kNegInf);
            } else if (rest <= 1e-12) {
                emission.push_back(-std::log(static_cast<double>(vocab - 1)));
            } else {
                emission.push_back(row[v] - std::log(rest));
            }
        }
    }
    // absorbing state loops onto itself
    for (int z2 = 0; z2 < h; ++z2) transition[a * h + z2] = z2 == a ? 0.0 : kNegInf;

    return Hmm(h, vocab, hmm.max_len(), eos, std::move(initial), std::move(transition),
               std::move(emission));
}

}  // namespace lexgen

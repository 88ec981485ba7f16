#pragma once

#include "bnrm/hedging.hpp"
#include "bnrm/ifa.hpp"
#include "bnrm/io.hpp"
#include "bnrm/lob.hpp"
#include "bnrm/pricing.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <boost/version.hpp>

#include "json.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace bnrm {

inline constexpr const char* kVersion = "1.0.0";

enum class Experiment { Simulate, Price, Hedge, LobSim, RefinanceCost, Diversify, IfaCheck, RnCompare };

inline const std::vector<std::pair<std::string, Experiment>>& experiment_names() {
    static const std::vector<std::pair<std::string, Experiment>> names{
        {"simulate", Experiment::Simulate},   {"price", Experiment::Price},
        {"hedge", Experiment::Hedge},         {"lob-sim", Experiment::LobSim},
        {"refinance-cost", Experiment::RefinanceCost}, {"diversify", Experiment::Diversify},
        {"ifa-check", Experiment::IfaCheck},  {"rn-compare", Experiment::RnCompare}};
    return names;
}

inline std::optional<Experiment> parse_experiment(const std::string& s) {
    for (const auto& [name, e] : experiment_names())
        if (name == s) return e;
    return std::nullopt;
}

inline std::string to_string(Experiment e) {
    for (const auto& [name, x] : experiment_names())
        if (x == e) return name;
    return "unknown";
}

struct ConfigIssue {
    std::string field;
    std::string message;
};

class ValidationError : public ConfigError {
public:
    explicit ValidationError(std::vector<ConfigIssue> issues)
        : ConfigError(summary(issues)), issues_(std::move(issues)) {}
    const std::vector<ConfigIssue>& issues() const noexcept { return issues_; }

private:
    static std::string summary(const std::vector<ConfigIssue>& issues) {
        std::string s = "invalid config:";
        for (const auto& i : issues) s += " " + i.field + " (" + i.message + ");";
        return s;
    }
    std::vector<ConfigIssue> issues_;
};

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

struct ClaimBlock {
    std::string kind = "zcb";  // zcb | numeraire | zero | digital | capped | binary
    double maturity = 30.0;
    double strike = 1.0;
    double event_prob = 0.01;

    Claim make() const {
        if (kind == "zcb") return Claim::zero_coupon_bond(maturity);
        if (kind == "numeraire") return Claim::numeraire(maturity);
        if (kind == "zero") return Claim::zero(maturity);
        if (kind == "digital") return Claim::digital(maturity, strike);
        if (kind == "capped") return Claim::capped(maturity, strike);
        return Claim::binary(maturity, event_prob);
    }
};

struct SimulateBlock {
    std::string scheme = "exact";
    std::string measure = "Q*";
    std::size_t substeps = 1;
    bool write_csv = true;
    std::vector<double> checkpoints;
};

struct HedgeBlock {
    std::vector<std::size_t> rebalance_every{1};
    std::vector<double> checkpoints;
    std::size_t histogram_bins = 40;
};

struct RefinanceBlock {
    GbmModel gbm{0.0, 0.5};
    double horizon = 4.0;
    std::size_t k_max = 50;
    std::size_t cells = 4000;
    std::size_t mc_paths = 0;
    double mc_step = 1e-3;
    bool bridge = true;
};

struct IfaBlock {
    std::string benefit = "indicator";  // indicator | constant | numeraire | unit_link | zero
    double maturity = 30.0;
    double probability = 0.01;
    double amount = 1.0;
    double strike = 1.0;
    double multiplier = 1.0;
    std::optional<double> premium;
    std::vector<double> allocation{1.0};
    double hedge_initial = 0.0;
    std::string strategy = "gop";
    double switch_time = 0.0;
    bool probe = false;
    std::vector<double> probe_sizes{1.0, 10.0, 100.0};
    std::vector<double> probe_capitals{0.0, 1e-3};

    InsuranceContractSpec make() const {
        if (benefit == "constant") return InsuranceContractSpec::constant(maturity, amount);
        if (benefit == "numeraire") return InsuranceContractSpec::numeraire(maturity);
        if (benefit == "unit_link") return InsuranceContractSpec::guaranteed_unit_link(maturity, probability, strike);
        if (benefit == "zero") return InsuranceContractSpec::zero(maturity);
        return InsuranceContractSpec::indicator(maturity, probability);
    }

    PermissibleStrategy make_strategy() const {
        if (strategy == "savings") return PermissibleStrategy::savings();
        if (strategy == "switch") return PermissibleStrategy::switch_at(switch_time);
        return PermissibleStrategy::gop();
    }
};

struct ExperimentConfig {
    Experiment experiment = Experiment::Price;
    ModelParams model;
    double step = 1.0 / 250.0;
    std::size_t n_paths = 0;
    std::uint64_t seed = 0;
    std::string output_dir;
    unsigned threads = 1;
    std::string sampler = "poisson";

    ClaimBlock claim;
    std::string price_scheme = "exact";
    SimulateBlock simulate;
    HedgeBlock hedge;
    LobConfig lob;
    RefinanceBlock refinance;
    std::vector<std::size_t> m_values{1, 2, 4, 8, 16, 32, 64, 128, 256};
    IfaBlock ifa;
    std::vector<double> rn_maturities{10.0, 30.0};

    std::string source_text;  // raw config, hashed into the manifest

    NoncentralSampler noncentral_sampler() const {
        return sampler == "gaussian_sum" ? NoncentralSampler::GaussianSum : NoncentralSampler::PoissonMixture;
    }
};

namespace detail {

namespace pt = boost::property_tree;

/// Typed lookups that record every problem instead of stopping at the first.
class ConfigReader {
public:
    ConfigReader(const pt::ptree& tree, std::vector<ConfigIssue>& issues) : tree_(tree), issues_(issues) {}

    bool has(const std::string& key) const { return tree_.get_optional<std::string>(pt::ptree::path_type(key, '.')).has_value(); }

    std::optional<std::string> text(const std::string& key, bool required = false) const {
        auto v = tree_.get_optional<std::string>(pt::ptree::path_type(key, '.'));
        if (!v) {
            if (required) issues_.push_back({key, "missing"});
            return std::nullopt;
        }
        std::string s = trim(*v);
        if (s.empty()) {
            issues_.push_back({key, "empty value"});
            return std::nullopt;
        }
        return s;
    }

    void number(const std::string& key, double& out, bool required = false) const {
        if (auto s = text(key, required)) {
            if (auto x = parse(*s)) out = *x;
            else issues_.push_back({key, "not a number: '" + *s + "'"});
        }
    }

    template <class I>
    void integer(const std::string& key, I& out, bool required = false) const {
        double x = 0.0;
        const auto before = issues_.size();
        bool seen = has(key);
        number(key, x, required);
        if (!seen || issues_.size() != before) return;
        if (!(x >= 0.0) || x != std::floor(x) || x > 9.007199254740992e15) issues_.push_back({key, "must be a nonnegative integer"});
        else out = static_cast<I>(x);
    }

    void flag(const std::string& key, bool& out) const {
        if (auto s = text(key)) {
            if (*s == "true" || *s == "1" || *s == "yes") out = true;
            else if (*s == "false" || *s == "0" || *s == "no") out = false;
            else issues_.push_back({key, "not a boolean: '" + *s + "'"});
        }
    }

    void word(const std::string& key, std::string& out, std::initializer_list<const char*> allowed) const {
        if (auto s = text(key)) {
            for (const char* a : allowed)
                if (*s == a) {
                    out = *s;
                    return;
                }
            std::string msg = "must be one of";
            for (const char* a : allowed) msg += std::string(" ") + a;
            issues_.push_back({key, msg});
        }
    }

    void numbers(const std::string& key, std::vector<double>& out) const {
        if (auto s = text(key)) {
            std::vector<double> v;
            std::string tok;
            std::istringstream is(replace_commas(*s));
            while (is >> tok) {
                if (auto x = parse(tok)) v.push_back(*x);
                else {
                    issues_.push_back({key, "not a number: '" + tok + "'"});
                    return;
                }
            }
            out = std::move(v);
        }
    }

    template <class I>
    void integers(const std::string& key, std::vector<I>& out) const {
        std::vector<double> v;
        const auto before = issues_.size();
        numbers(key, v);
        if (issues_.size() != before || !has(key)) return;
        std::vector<I> r;
        for (double x : v) {
            if (!(x >= 0.0) || x != std::floor(x)) {
                issues_.push_back({key, "entries must be nonnegative integers"});
                return;
            }
            r.push_back(static_cast<I>(x));
        }
        out = std::move(r);
    }

    void problem(const std::string& key, const std::string& msg) const { issues_.push_back({key, msg}); }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return {};
        const auto e = s.find_last_not_of(" \t\r\n");
        std::string t = s.substr(b, e - b + 1);
        // Strip trailing ';' comments.
        if (const auto c = t.find(" ;"); c != std::string::npos) t = trim(t.substr(0, c));
        return t;
    }
    static std::string replace_commas(std::string s) {
        for (char& c : s)
            if (c == ',') c = ' ';
        return s;
    }
    static std::optional<double> parse(const std::string& s) {
        char* end = nullptr;
        const double x = std::strtod(s.c_str(), &end);
        if (end == s.c_str() || *end != '\0' || !std::isfinite(x)) return std::nullopt;
        return x;
    }

    const pt::ptree& tree_;
    std::vector<ConfigIssue>& issues_;
};

inline void require_section(const pt::ptree& tree, const std::string& name, std::vector<ConfigIssue>& issues) {
    if (!tree.get_child_optional(name)) issues.push_back({name, "section missing for this experiment"});
}

inline void read_lob(const ConfigReader& r, LobConfig& lob) {
    r.integer("lob.n_claims", lob.n_claims);
    r.number("lob.claim_maturity", lob.claim_maturity);
    std::string kind = "wright_fisher";
    r.word("lob.event_model", kind, {"wright_fisher", "bernoulli"});
    double prob = lob.event_model.probability, vol = lob.event_model.volatility, corr = 0.0;
    r.number("lob.probability", prob);
    r.number("lob.volatility", vol);
    r.number("lob.correlation", corr);
    lob.event_model = kind == "bernoulli" ? EventModel::bernoulli(prob) : EventModel::wright_fisher(vol, prob, corr);
    if (kind == "bernoulli") lob.event_model.driver_correlation = corr;
    r.number("lob.initial_working_capital", lob.initial_working_capital);
    r.number("lob.critical_level", lob.critical_level);
    r.number("lob.refinancing_ratio", lob.refinancing_ratio);
}

}  // namespace detail

/// Parses an INI config. `forced` is the subcommand, if any; it must agree
/// with run.experiment when both are given.
inline ExperimentConfig parse_config(const std::string& text, std::optional<Experiment> forced = std::nullopt) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::vector<ConfigIssue> issues;
    try {
        std::istringstream is(text);
        pt::ini_parser::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ValidationError({{"<file>", "line " + std::to_string(e.line()) + ": " + e.message()}});
    }
    detail::ConfigReader r(tree, issues);
    ExperimentConfig c;
    c.source_text = text;

    if (auto e = r.text("run.experiment", !forced)) {
        if (auto x = parse_experiment(*e)) {
            c.experiment = *x;
            if (forced && *forced != *x)
                r.problem("run.experiment", "config names '" + *e + "' but the subcommand is '" + to_string(*forced) + "'");
        } else {
            r.problem("run.experiment", "unknown experiment '" + *e + "'");
        }
    }
    if (forced) c.experiment = *forced;
    r.integer("run.seed", c.seed, true);
    r.integer("run.n_paths", c.n_paths, c.experiment != Experiment::RefinanceCost);
    r.number("run.step", c.step);
    if (auto o = r.text("run.output")) c.output_dir = *o;
    r.integer("run.threads", c.threads);
    r.word("run.sampler", c.sampler, {"poisson", "gaussian_sum"});
    if (!(c.step > 0.0)) r.problem("run.step", "must be positive");

    auto& m = c.model;
    r.number("model.activity", m.activity);
    r.number("model.initial_activity_time", m.initial_activity_time);
    r.number("model.s_star_0", m.s_star_0);
    r.number("model.horizon", m.horizon);
    if (r.has("model.lambda_breaks") || r.has("model.lambda_values")) {
        std::vector<double> br, va;
        r.numbers("model.lambda_breaks", br);
        r.numbers("model.lambda_values", va);
        try {
            m.net_risk_adjusted_return = PiecewiseConstant(br, va);
        } catch (const ConfigError& e) {
            r.problem("model.lambda_breaks", e.what());
        }
    } else {
        double lam = 0.05;
        r.number("model.lambda", lam);
        m.net_risk_adjusted_return = PiecewiseConstant(lam);
    }
    try {
        m.validate();
    } catch (const ConfigError& e) {
        r.problem("model", e.what());
    }

    auto read_claim = [&] {
        detail::require_section(tree, "claim", issues);
        r.word("claim.kind", c.claim.kind, {"zcb", "numeraire", "zero", "digital", "capped", "binary"});
        r.number("claim.maturity", c.claim.maturity, true);
        r.number("claim.strike", c.claim.strike);
        r.number("claim.event_prob", c.claim.event_prob);
        if (!(c.claim.maturity > 0.0) || c.claim.maturity > m.horizon + 1e-12)
            r.problem("claim.maturity", "must lie in (0, model.horizon]");
        if (!(c.claim.event_prob >= 0.0 && c.claim.event_prob <= 1.0)) r.problem("claim.event_prob", "must lie in [0,1]");
    };
    auto check_lob = [&] {
        try {
            c.lob.validate();
        } catch (const ConfigError& e) {
            r.problem("lob", e.what());
        }
    };

    switch (c.experiment) {
        case Experiment::Simulate:
            r.word("simulate.scheme", c.simulate.scheme, {"exact", "euler"});
            r.word("simulate.measure", c.simulate.measure, {"Q*", "P"});
            r.integer("simulate.substeps", c.simulate.substeps);
            r.flag("simulate.write_csv", c.simulate.write_csv);
            r.numbers("simulate.checkpoints", c.simulate.checkpoints);
            if (c.simulate.scheme == "exact" && c.simulate.measure == "P")
                r.problem("simulate.scheme", "exact sampling is available under Q* only");
            if (c.simulate.substeps < 1) r.problem("simulate.substeps", "must be at least 1");
            break;
        case Experiment::Price:
            read_claim();
            r.word("price.scheme", c.price_scheme, {"exact", "euler"});
            break;
        case Experiment::Hedge:
            read_claim();
            r.integers("hedge.rebalance_every", c.hedge.rebalance_every);
            r.numbers("hedge.checkpoints", c.hedge.checkpoints);
            r.integer("hedge.histogram_bins", c.hedge.histogram_bins);
            if (c.hedge.rebalance_every.empty()) r.problem("hedge.rebalance_every", "needs at least one entry");
            for (auto e : c.hedge.rebalance_every)
                if (e == 0) r.problem("hedge.rebalance_every", "entries must be positive");
            if (c.hedge.histogram_bins < 1) r.problem("hedge.histogram_bins", "must be at least 1");
            break;
        case Experiment::LobSim:
            detail::require_section(tree, "lob", issues);
            detail::read_lob(r, c.lob);
            check_lob();
            if (c.lob.claim_maturity > m.horizon + 1e-12) r.problem("lob.claim_maturity", "exceeds model.horizon");
            break;
        case Experiment::RefinanceCost:
            detail::require_section(tree, "lob", issues);
            detail::read_lob(r, c.lob);
            check_lob();
            r.number("refinance.log_drift", c.refinance.gbm.log_drift);
            r.number("refinance.vol", c.refinance.gbm.vol);
            r.number("refinance.horizon", c.refinance.horizon);
            r.integer("refinance.k_max", c.refinance.k_max);
            r.integer("refinance.cells", c.refinance.cells);
            c.refinance.mc_paths = c.n_paths;
            r.integer("refinance.mc_paths", c.refinance.mc_paths);
            r.number("refinance.mc_step", c.refinance.mc_step);
            r.flag("refinance.bridge", c.refinance.bridge);
            if (!(c.refinance.gbm.vol > 0.0)) r.problem("refinance.vol", "must be positive");
            if (!(c.refinance.horizon > 0.0)) r.problem("refinance.horizon", "must be positive");
            if (c.refinance.k_max < 1) r.problem("refinance.k_max", "must be at least 1");
            if (c.refinance.cells < 2) r.problem("refinance.cells", "must be at least 2");
            if (!(c.refinance.mc_step > 0.0)) r.problem("refinance.mc_step", "must be positive");
            break;
        case Experiment::Diversify:
            detail::require_section(tree, "lob", issues);
            detail::read_lob(r, c.lob);
            r.integers("diversify.m_values", c.m_values);
            check_lob();
            if (c.m_values.empty()) r.problem("diversify.m_values", "needs at least one book size");
            for (auto v : c.m_values)
                if (v == 0) r.problem("diversify.m_values", "book sizes must be at least 1");
            if (c.lob.event_model.kind != EventModel::Kind::WrightFisher)
                r.problem("lob.event_model", "diversify needs wright_fisher events");
            if (c.lob.event_model.driver_correlation != 0.0)
                r.problem("lob.correlation", "diversify needs independent insurance drivers");
            break;
        case Experiment::IfaCheck: {
            detail::require_section(tree, "ifa", issues);
            auto& f = c.ifa;
            r.word("ifa.benefit", f.benefit, {"indicator", "constant", "numeraire", "unit_link", "zero"});
            r.number("ifa.maturity", f.maturity, true);
            r.number("ifa.probability", f.probability);
            r.number("ifa.amount", f.amount);
            r.number("ifa.strike", f.strike);
            r.number("ifa.multiplier", f.multiplier);
            if (r.has("ifa.premium")) {
                double p = 0.0;
                r.number("ifa.premium", p);
                f.premium = p;
            }
            r.numbers("ifa.allocation", f.allocation);
            r.number("ifa.hedge_initial", f.hedge_initial);
            r.word("ifa.strategy", f.strategy, {"gop", "savings", "switch"});
            r.number("ifa.switch_time", f.switch_time);
            r.flag("ifa.probe", f.probe);
            r.numbers("ifa.probe_sizes", f.probe_sizes);
            r.numbers("ifa.probe_capitals", f.probe_capitals);
            if (!(f.maturity > 0.0) || f.maturity > m.horizon + 1e-12) r.problem("ifa.maturity", "must lie in (0, model.horizon]");
            if (!(f.multiplier > 0.0)) r.problem("ifa.multiplier", "must be positive");
            if (!(f.probability >= 0.0 && f.probability <= 1.0)) r.problem("ifa.probability", "must lie in [0,1]");
            for (double a : f.allocation)
                if (!(a >= 0.0)) r.problem("ifa.allocation", "entries must be nonnegative");
            if (!(f.hedge_initial >= 0.0)) r.problem("ifa.hedge_initial", "must be nonnegative");
            break;
        }
        case Experiment::RnCompare:
            r.numbers("rn_compare.maturities", c.rn_maturities);
            if (c.rn_maturities.empty()) r.problem("rn_compare.maturities", "needs at least one maturity");
            for (double T : c.rn_maturities)
                if (!(T > 0.0) || T > m.horizon + 1e-12) r.problem("rn_compare.maturities", "must lie in (0, model.horizon]");
            break;
    }
    const bool mc = c.experiment != Experiment::RefinanceCost;
    if (mc && r.has("run.n_paths") && c.n_paths < 2) r.problem("run.n_paths", "must be at least 2");
    if (!issues.empty()) throw ValidationError(std::move(issues));
    return c;
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

struct RunOptions {
    std::optional<std::string> output_dir;  // overrides run.output
    std::optional<unsigned> threads;        // overrides run.threads; never changes results
    bool verbose = false;
    std::ostream* log = &std::cerr;
};

struct RunResult {
    int status = 0;
    std::filesystem::path output_dir;
    std::vector<std::string> outputs;  // file names, in write order
    std::vector<std::string> warnings;
};

namespace detail {

class ArtifactSink {
public:
    ArtifactSink(std::filesystem::path dir, RunResult& res) : dir_(std::move(dir)), res_(res) {}

    void csv(const std::string& name, const std::function<void(CsvWriter&)>& body) {
        std::ostringstream ss;
        CsvWriter w(ss);
        body(w);
        write(name, ss.str());
    }

    void write(const std::string& name, const std::string& bytes) {
        std::ofstream out(dir_ / name, std::ios::binary);
        if (!out) throw ConfigError("cannot write " + (dir_ / name).string());
        out << bytes;
        files_.push_back({name, bytes.size(), fnv1a(bytes)});
        res_.outputs.push_back(name);
    }

    struct FileInfo {
        std::string name;
        std::size_t bytes;
        std::uint64_t hash;
    };
    const std::vector<FileInfo>& files() const { return files_; }

private:
    std::filesystem::path dir_;
    RunResult& res_;
    std::vector<FileInfo> files_;
};

inline std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline void run_simulate(const ExperimentConfig& c, unsigned threads, ArtifactSink& sink) {
    const auto grid = TimeGrid::uniform(c.model.horizon, c.step);
    SimulationOptions so;
    so.substeps = c.simulate.substeps;
    so.threads = threads;
    so.sampler = c.noncentral_sampler();
    const bool euler = c.simulate.scheme == "euler";
    const Measure meas = c.simulate.measure == "P" ? Measure::P : Measure::QStar;
    const PathSet ps = euler ? simulate_sgop_euler(c.model, grid, c.n_paths, c.seed, meas, so)
                             : simulate_sgop_exact(c.model, grid, c.n_paths, c.seed, so);
    if (c.simulate.write_csv) {
        std::ostringstream ss;
        write_paths_csv(ss, ps);
        sink.write("paths.csv", ss.str());
    }
    std::ostringstream bin(std::ios::binary);
    write_paths_binary(bin, ps, c.model);
    sink.write("paths.bin", bin.str());
    if (meas == Measure::P) {
        auto cps = c.simulate.checkpoints;
        if (cps.empty()) cps = {grid.back()};
        std::vector<MartingaleCheckpoint> rows;
        std::vector<double> col(ps.n_paths());
        for (double t : cps) {
            const auto k = static_cast<Eigen::Index>(grid.nearest(t));
            for (std::size_t i = 0; i < col.size(); ++i) col[i] = ps.lambda_density(static_cast<Eigen::Index>(i), k);
            rows.push_back(martingale_diagnostic(grid[static_cast<std::size_t>(k)], col));
        }
        std::ostringstream ss;
        write_martingale_csv(ss, rows);
        sink.write("martingale.csv", ss.str());
    }
}

inline PricingOptions pricing_options(const ExperimentConfig& c, unsigned threads) {
    PricingOptions o;
    o.scheme = c.price_scheme == "euler" ? Scheme::Euler : Scheme::Exact;
    o.euler_step = c.step;
    o.threads = threads;
    o.sampler = c.noncentral_sampler();
    return o;
}

inline void run_price(const ExperimentConfig& c, unsigned threads, ArtifactSink& sink) {
    const auto rep = bn_price_mc(c.model, c.claim.make(), c.n_paths, c.seed, pricing_options(c, threads));
    sink.csv("price.csv", [&](CsvWriter& w) {
        w.row("claim_id", "bn_price", "se", "closed_form", "rn_price", "gap", "n_paths", "seed");
        w.field(rep.claim_id).field(rep.bn_price).field(rep.se);
        for (const auto& o : {rep.closed_form, rep.rn_price, rep.gap}) o ? w.field(*o) : w.empty();
        w.field(rep.n_paths).field(c.seed).end();
    });
}

inline void run_rn_compare(const ExperimentConfig& c, unsigned threads, ArtifactSink& sink) {
    auto o = pricing_options(c, threads);
    sink.csv("rn_compare.csv", [&](CsvWriter& w) {
        w.row("T", "fair", "risk_neutral", "gap", "bn_price_mc", "bn_se", "gap_mc_z", "real_world_mc", "real_world_se",
              "numeraire_change_z");
        for (double T : c.rn_maturities) {
            const auto rn = rn_comparison(c.model, T);
            const auto bn = bn_price_mc(c.model, Claim::zero_coupon_bond(T), c.n_paths, c.seed, o);
            const auto rw = real_world_price_mc(c.model, Claim::zero_coupon_bond(T), c.n_paths, c.seed, o);
            const Estimate b{bn.bn_price, bn.se}, p{rw.bn_price, rw.se};
            const double z_gap = bn.se > 0.0 ? std::abs((1.0 - bn.bn_price) - rn.gap) / bn.se : 0.0;
            w.row(T, rn.fair, rn.risk_neutral, rn.gap, bn.bn_price, bn.se, z_gap, rw.bn_price, rw.se, combined_z(b, p));
        }
    });
}

inline void run_hedge(const ExperimentConfig& c, unsigned threads, ArtifactSink& sink) {
    HedgeRunOptions o;
    o.step = c.step;
    o.rebalance_every = c.hedge.rebalance_every;
    o.checkpoints = c.hedge.checkpoints;
    o.threads = threads;
    o.sampler = c.noncentral_sampler();
    const auto rep = simulate_bnrm_hedge(c.model, c.claim.make(), c.n_paths, c.seed, o);
    sink.csv("hedge_checkpoints.csv", [&](CsvWriter& w) {
        w.row("t", "mean_price_hat", "price_hat_se", "mean_eta", "eta_se");
        for (const auto& cp : rep.checkpoints) w.row(cp.time, cp.price_hat.value, cp.price_hat.se, cp.eta.value, cp.eta.se);
    });
    sink.csv("hedge_covariation.csv", [&](CsvWriter& w) {
        w.row("initial_price_hat", "covariation_mean", "covariation_se", "covariation_z");
        w.row(rep.initial_price_hat, rep.orthogonality.mean, rep.orthogonality.se, rep.orthogonality.z);
    });
    sink.csv("hedge_rebalancing.csv", [&](CsvWriter& w) {
        w.row("rebalance_every", "rebalance_step", "mean_error", "se", "rmse", "max_abs");
        for (const auto& r : rep.rebalancing)
            w.row(r.every, r.step, r.delivery.mean_error, r.delivery.se, r.delivery.rmse, r.delivery.max_abs);
    });
    // Histogram of the terminal error at the first rebalancing frequency.
    const auto& err = rep.delivery.terminal_error;
    const std::size_t bins = c.hedge.histogram_bins;
    double lo = *std::min_element(err.begin(), err.end()), hi = *std::max_element(err.begin(), err.end());
    if (!(hi > lo)) hi = lo + 1.0;
    std::vector<std::size_t> count(bins, 0);
    for (double e : err) {
        auto b = static_cast<std::size_t>((e - lo) / (hi - lo) * static_cast<double>(bins));
        count[std::min(b, bins - 1)]++;
    }
    sink.csv("hedge_errors.csv", [&](CsvWriter& w) {
        w.row("bin_lo", "bin_hi", "count");
        for (std::size_t b = 0; b < bins; ++b)
            w.row(lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins),
                  lo + (hi - lo) * static_cast<double>(b + 1) / static_cast<double>(bins), count[b]);
    });
}

inline void run_lob(const ExperimentConfig& c, unsigned threads, ArtifactSink& sink) {
    const auto grid = TimeGrid::uniform(c.lob.claim_maturity, c.step);
    SimulationOptions so;
    so.threads = threads;
    so.sampler = c.noncentral_sampler();
    const auto paths = simulate_sgop_exact(c.model, grid, c.n_paths, c.seed, so);
    const auto events = simulate_event_martingales(c.lob, grid, c.n_paths, c.seed);
    WorkingCapitalOptions wo;
    wo.threads = threads;
    const auto wc = working_capital_path(c.lob, c.model, paths, events, LobStrategy::bnrm(), wo);
    const auto last = static_cast<Eigen::Index>(grid.size() - 1);
    sink.csv("refinancing.csv", [&](CsvWriter& w) {
        w.row("path", "k", "rho_k");
        for (std::size_t i = 0; i < wc.rho_times.size(); ++i)
            for (std::size_t k = 0; k < wc.rho_times[i].size(); ++k) w.row(i, k + 1, wc.rho_times[i][k]);
    });
    std::vector<double> dc(c.n_paths), rT(c.n_paths), cT(c.n_paths), nref(c.n_paths);
    sink.csv("lob_paths.csv", [&](CsvWriter& w) {
        w.row("path", "c_prime_T", "eta_T", "refinancing_T", "capital_T", "wc1_residual_T", "n_refinancings");
        for (std::size_t i = 0; i < c.n_paths; ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            dc[i] = wc.c_prime(r, last) - c.lob.initial_working_capital;
            rT[i] = wc.refinancing(r, last);
            cT[i] = wc.c_refinanced(r, last);
            nref[i] = static_cast<double>(wc.rho_times[i].size());
            w.row(i, wc.c_prime(r, last), wc.monitoring(r, last), rT[i], cT[i], wc.wc1_residual(r, last), wc.rho_times[i].size());
        }
    });
    sink.csv("lob_summary.csv", [&](CsvWriter& w) {
        w.row("quantity", "mean", "se");
        for (const auto& [name, v] : std::vector<std::pair<const char*, const std::vector<double>*>>{
                 {"c_prime_change", &dc}, {"refinancing_T", &rT}, {"capital_T", &cT}, {"n_refinancings", &nref}}) {
            const auto e = mean_and_se(*v);
            w.row(name, e.value, e.se);
        }
        w.row("identity_rmse", wc.identity_rmse, 0.0);
    });
}

inline void run_refinance(const ExperimentConfig& c, unsigned threads, ArtifactSink& sink, RunResult& res) {
    RefinancingCostOptions ro;
    ro.cells = c.refinance.cells;
    const auto rep = expected_refinancing_cost(c.lob, c.refinance.gbm, c.refinance.horizon, c.refinance.k_max, ro);
    if (rep.warning) res.warnings.push_back(*rep.warning);
    std::optional<RefinancingMcReport> mc;
    if (c.refinance.mc_paths >= 2) {
        GbmPassageOptions go;
        go.step = c.refinance.mc_step;
        go.bridge = c.refinance.bridge;
        go.threads = threads;
        mc = refinancing_cost_mc(c.lob, c.refinance.gbm, c.refinance.horizon, c.refinance.mc_paths, c.seed, go);
    }
    sink.csv("refinance_cost.csv", [&](CsvWriter& w) {
        w.row("cost", "first_term_bound", "truncation_bound", "k_max", "mc_cost", "mc_se", "mc_z", "mc_paths");
        w.field(rep.cost).field(rep.first_term_bound).field(rep.truncation_bound).field(c.refinance.k_max);
        if (mc) {
            const double z = mc->cost.se > 0.0 ? std::abs(mc->cost.value - rep.cost) / mc->cost.se : 0.0;
            w.field(mc->cost.value).field(mc->cost.se).field(z).field(c.refinance.mc_paths);
        } else {
            w.empty().empty().empty().field(std::size_t{0});
        }
        w.end();
    });
    sink.csv("refinance_hits.csv", [&](CsvWriter& w) {
        w.row("k", "p_hit", "p_hit_mc");
        for (std::size_t k = 0; k < rep.per_k.size(); ++k) {
            w.field(k + 1).field(rep.per_k[k]);
            if (mc) w.field(k < mc->hit_frequency.size() ? mc->hit_frequency[k] : 0.0);
            else w.empty();
            w.end();
        }
    });
}

inline void run_diversify(const ExperimentConfig& c, unsigned threads, ArtifactSink& sink) {
    DiversificationOptions o;
    o.step = c.step;
    o.threads = threads;
    o.sampler = c.noncentral_sampler();
    const auto rows = diversification_experiment(c.model, c.lob, c.m_values, c.n_paths, c.seed, o);
    sink.csv("diversification.csv", [&](CsvWriter& w) {
        w.row("m", "qv_mean", "qv_se", "qv_separate_mean", "qv_separate_se");
        for (const auto& r : rows) w.row(r.m, r.qv.value, r.qv.se, r.qv_separate.value, r.qv_separate.se);
    });
    std::vector<double> lx, ly;
    for (const auto& r : rows)
        if (r.qv.value > 0.0) {
            lx.push_back(std::log(static_cast<double>(r.m)));
            ly.push_back(std::log(r.qv.value));
        }
    sink.csv("diversification_fit.csv", [&](CsvWriter& w) {
        w.row("loglog_slope", "points");
        lx.size() >= 2 ? w.field(ols_slope(lx, ly)) : w.empty();
        w.field(lx.size()).end();
    });
}

inline void run_ifa(const ExperimentConfig& c, unsigned threads, ArtifactSink& sink) {
    IfaOptions io;
    io.step = c.step;
    io.threads = threads;
    io.sampler = c.noncentral_sampler();
    auto contract = c.ifa.make();
    // Same streams as the bound computed inside the check.
    const auto bound = premium_bound(c.model, contract, c.n_paths, c.seed, io, c.n_paths);
    contract.premium = c.ifa.premium ? *c.ifa.premium : c.ifa.multiplier * bound.value;
    auto strategy = c.ifa.make_strategy();
    const auto rep =
        deflated_value_check(c.model, contract, c.ifa.allocation, c.ifa.hedge_initial, c.n_paths, c.seed, strategy, io);
    sink.csv("ifa.csv", [&](CsvWriter& w) {
        w.row("bound", "se", "premium", "compliant", "deflated_value", "se", "deflated_strategy", "deflated_strategy_se",
              "strategy");
        w.row(rep.bound.value, rep.bound.se, rep.premium, rep.compliant, rep.deflated_value.value, rep.deflated_value.se,
              rep.deflated_strategy.value, rep.deflated_strategy.se, strategy.name());
    });
    if (!c.ifa.probe) return;
    ProbeOptions po;
    po.sizes = c.ifa.probe_sizes;
    po.initial_capitals = c.ifa.probe_capitals;
    po.contracts = std::max<std::size_t>(1, c.ifa.allocation.size());
    po.ifa = io;
    const double mult = c.ifa.premium && bound.value > 0.0 ? *c.ifa.premium / bound.value : c.ifa.multiplier;
    const auto probe = arbitrage_probe(c.model, contract, mult, c.n_paths, c.seed, po);
    sink.csv("ifa_probe.csv", [&](CsvWriter& w) {
        w.row("label", "multiplier", "premium", "strategy", "size", "initial_capital", "negative_fraction",
              "positive_fraction", "min_value", "mean_value", "violation");
        for (const auto& r : probe.rows)
            w.row(probe.label, probe.multiplier, probe.premium, r.strategy, r.size, r.initial_capital, r.negative_fraction,
                  r.positive_fraction, r.min_value, r.mean_value, r.violation);
    });
}

inline nlohmann::json config_json(const ExperimentConfig& c) {
    std::istringstream is(c.source_text);
    boost::property_tree::ptree tree;
    boost::property_tree::ini_parser::read_ini(is, tree);
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [sec, body] : tree) {
        auto& s = j[sec];
        s = nlohmann::json::object();
        for (const auto& [k, v] : body) s[k] = v.data();
    }
    return j;
}

}  // namespace detail

inline nlohmann::json issues_json(const std::vector<ConfigIssue>& issues) {
    nlohmann::json j = {{"status", "invalid_config"}, {"errors", nlohmann::json::array()}};
    for (const auto& i : issues) j["errors"].push_back({{"field", i.field}, {"message", i.message}});
    return j;
}

/// Runs one experiment and writes its CSVs and manifest.json. Every CSV body
/// depends only on the config, never on the worker count or the clock.
inline RunResult run(const ExperimentConfig& c, const RunOptions& ro = {}) {
    RunResult res;
    std::string dir = ro.output_dir.value_or(c.output_dir);
    if (dir.empty()) dir = "out/" + to_string(c.experiment);
    res.output_dir = dir;
    std::filesystem::create_directories(res.output_dir);
    const unsigned threads = ro.threads.value_or(c.threads);
    const auto started = detail::utc_now();
    const auto t0 = std::chrono::steady_clock::now();
    if (ro.verbose && ro.log)
        *ro.log << "bnrm: " << to_string(c.experiment) << " seed=" << c.seed << " n_paths=" << c.n_paths
                << " threads=" << resolve_threads(threads) << " -> " << res.output_dir.string() << "\n";

    detail::ArtifactSink sink(res.output_dir, res);
    switch (c.experiment) {
        case Experiment::Simulate: detail::run_simulate(c, threads, sink); break;
        case Experiment::Price: detail::run_price(c, threads, sink); break;
        case Experiment::RnCompare: detail::run_rn_compare(c, threads, sink); break;
        case Experiment::Hedge: detail::run_hedge(c, threads, sink); break;
        case Experiment::LobSim: detail::run_lob(c, threads, sink); break;
        case Experiment::RefinanceCost: detail::run_refinance(c, threads, sink, res); break;
        case Experiment::Diversify: detail::run_diversify(c, threads, sink); break;
        case Experiment::IfaCheck: detail::run_ifa(c, threads, sink); break;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    nlohmann::json m;
    m["experiment"] = to_string(c.experiment);
    m["seed"] = c.seed;
    m["n_paths"] = c.n_paths;
    m["step"] = format_double(c.step);
    m["sampler"] = c.sampler;
    m["params"] = canonical_params(c.model);
    m["params_hash"] = hex64(params_hash(c.model));
    m["config_hash"] = hex64(fnv1a(c.source_text));
    m["config"] = detail::config_json(c);
    m["versions"] = {{"bnrm", kVersion},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"boost", BOOST_LIB_VERSION},
                     {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                     {"compiler", __VERSION__},
                     {"cplusplus", __cplusplus}};
    m["warnings"] = res.warnings;
    m["outputs"] = nlohmann::json::array();
    for (const auto& f : sink.files())
        m["outputs"].push_back({{"file", f.name}, {"bytes", f.bytes}, {"fnv1a", hex64(f.hash)}});
    // Not part of any CSV body.
    m["threads"] = resolve_threads(threads);
    m["started_utc"] = started;
    m["elapsed_seconds"] = secs;
    std::ofstream(res.output_dir / "manifest.json") << m.dump(2) << "\n";
    if (ro.verbose && ro.log) {
        for (const auto& w : res.warnings) *ro.log << "warning: " << w << "\n";
        *ro.log << "bnrm: wrote " << res.outputs.size() << " files in " << secs << " s\n";
    }
    return res;
}

}  // namespace bnrm

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lrtim/circuit.hpp"
#include "lrtim/compression.hpp"
#include "lrtim/critical.hpp"
#include "lrtim/errors.hpp"
#include "lrtim/quench.hpp"
#include "lrtim/spectra.hpp"

#ifndef LRTIM_VERSION
#define LRTIM_VERSION "0.4.0"
#endif

namespace lrtim {

using json = nlohmann::json;

/// Invalid configuration; maps to exit code 2.
class ConfigError : public Error {
  public:
    using Error::Error;
};

inline const std::vector<std::string>& experiment_kinds() {
    static const std::vector<std::string> kinds{"phase-diagram", "exponents",   "collapse", "quench-sweep",
                                                "ai-scaling",    "domain-dist", "compress", "circuit-verify"};
    return kinds;
}

/// Every recognized key with its default. User files may only set keys
/// that appear here (the `critical` list is free-form).
inline json default_config() {
    return json::parse(R"({
  "kind": "exponents",
  "name": "",
  "output": "runs",
  "workers": 1,
  "model": {"alphas": [3.0], "j0": [-1.0], "mode": "algebraic", "sizes": [8, 10, 12, 14, 16, 18]},
  "scan": {"g_lo": 0.5, "g_hi": 1.5, "coarse_step": 0.01, "fine_step": 0.001, "derivative_step": 0.001},
  "critical": [],
  "quench": {"g0": 5.0, "tolerance": 1e-8, "scheme": "magnus4", "initial": "ground_state"},
  "taus": {"lo": 0.01, "hi": 100.0, "points": 17, "log": true, "values": []},
  "fit": {"window": [5.0, 50.0], "adiabatic_window": [1000.0, 1e300]},
  "ai": {"theta_ferro": 0.995, "theta_antiferro": 0.999, "grid_points": 1000, "window": [1.0, 10.0]},
  "collapse": {"quantities": ["p_ex_c", "e_r_density_c"], "y_small": 0.1, "y_large": 1.0},
  "compress": {"alphas": [1.0, 2.0, 3.0], "N": 362, "terms": [2, 4, 6, 8, 10], "refine": true},
  "circuit": {"N": 8, "alpha": 2.0, "j0": 1.0, "g0": 5.0, "tau_q": 5.0, "dt_divisions": [64, 128, 256, 512, 1024], "step_field": 1.0}
})");
}

namespace detail {

inline void check_keys(const json& user, const json& reference, const std::string& path) {
    if (!user.is_object()) return;
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!reference.contains(it.key())) throw ConfigError("config: unknown key '" + key + "'");
        if (it.key() == "critical") continue;
        const json& ref = reference.at(it.key());
        if (ref.is_object()) {
            if (!it.value().is_object()) throw ConfigError("config: '" + key + "' must be a table");
            check_keys(it.value(), ref, key);
        }
    }
}

template <class T>
T get(const json& j, const std::string& path) {
    const json* node = &j;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (!node->contains(part)) throw ConfigError("config: missing key '" + path + "'");
        node = &node->at(part);
    }
    try {
        return node->get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: '" + path + "' has the wrong type");
    }
}

}  // namespace detail

/// Parsed and defaulted experiment configuration.
struct ExperimentConfig {
    json data;

    std::string kind() const { return data.at("kind").get<std::string>(); }
    std::string name() const {
        const auto n = data.at("name").get<std::string>();
        return n.empty() ? kind() : n;
    }
    int workers() const { return data.at("workers").get<int>(); }

    template <class T>
    T get(const std::string& path) const {
        return detail::get<T>(data, path);
    }

    /// Applies "a.b.c=value"; the value is parsed as JSON when possible.
    void apply_override(const std::string& assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
        const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::exception&) {
            value = raw;
        }
        json* node = &data;
        std::stringstream ss(key);
        std::string part;
        std::vector<std::string> parts;
        while (std::getline(ss, part, '.')) parts.push_back(part);
        json ref = default_config();
        const json* rnode = &ref;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            if (!rnode->contains(parts[i])) throw ConfigError("override: unknown key '" + key + "'");
            rnode = &rnode->at(parts[i]);
            node = &(*node)[parts[i]];
        }
        *node = value;
        validate();
    }

    std::vector<double> taus() const {
        auto values = get<std::vector<double>>("taus.values");
        if (!values.empty()) {
            std::sort(values.begin(), values.end());
            return values;
        }
        const double lo = get<double>("taus.lo"), hi = get<double>("taus.hi");
        const int points = get<int>("taus.points");
        std::vector<double> out;
        for (int i = 0; i < points; ++i) {
            const double f = points == 1 ? 0.0 : static_cast<double>(i) / (points - 1);
            out.push_back(get<bool>("taus.log") ? lo * std::pow(hi / lo, f) : lo + f * (hi - lo));
        }
        return out;
    }

    FitWindow window(const std::string& path) const {
        const auto w = get<std::vector<double>>(path);
        return {w.at(0), w.at(1)};
    }

    void validate() const {
        const auto& kinds = experiment_kinds();
        if (std::find(kinds.begin(), kinds.end(), kind()) == kinds.end())
            throw ConfigError("config: unknown experiment kind '" + kind() + "'");
        if (workers() < 1) throw ConfigError("config: workers must be at least 1");
        const auto sizes = get<std::vector<int>>("model.sizes");
        const bool needs_model = kind() != "compress" && kind() != "circuit-verify";
        if (needs_model) {
            if (sizes.empty()) throw ConfigError("config: model.sizes is empty");
            if (get<std::vector<double>>("model.alphas").empty()) throw ConfigError("config: model.alphas is empty");
            if (get<std::vector<double>>("model.j0").empty()) throw ConfigError("config: model.j0 is empty");
        }
        for (int n : sizes)
            if (n < 2 || n % 2 != 0 || n > default_max_sites)
                throw ConfigError("config: sizes must be even and between 2 and " + std::to_string(default_max_sites));
        for (double a : get<std::vector<double>>("model.alphas"))
            if (a < 0.0) throw ConfigError("config: alpha must be non-negative");
        for (double j : get<std::vector<double>>("model.j0"))
            if (j == 0.0) throw ConfigError("config: J0 must be non-zero");
        const auto mode = get<std::string>("model.mode");
        if (mode != "algebraic" && mode != "nearest_neighbor") throw ConfigError("config: unknown coupling mode '" + mode + "'");
        if (get<double>("quench.tolerance") <= 0.0) throw ConfigError("config: quench.tolerance must be positive");
        try {
            scheme_from_string(get<std::string>("quench.scheme"));
            initial_state_from_string(get<std::string>("quench.initial"));
        } catch (const InvalidArgument& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
        if (get<std::vector<double>>("taus.values").empty()) {
            if (get<double>("taus.lo") <= 0.0 || get<double>("taus.hi") < get<double>("taus.lo") || get<int>("taus.points") < 1)
                throw ConfigError("config: invalid tau grid");
        }
        for (const auto& c : data.at("critical"))
            for (const char* k : {"alpha", "j0", "g_c"})
                if (!c.contains(k)) throw ConfigError(std::string("config: critical entries need '") + k + "'");
        if (kind() == "compress" && get<std::vector<int>>("compress.terms").empty())
            throw ConfigError("config: compress.terms is empty");
        if (kind() == "circuit-verify" && get<std::vector<int>>("circuit.dt_divisions").empty())
            throw ConfigError("config: circuit.dt_divisions is empty");
    }

    /// Defaults merged with `user`; a run manifest is accepted and its
    /// config snapshot used.
    static ExperimentConfig from_json(json user) {
        if (user.contains("config") && user.contains("jobs")) user = user.at("config");
        if (!user.is_object()) throw ConfigError("config: top level must be a table");
        const json defaults = default_config();
        detail::check_keys(user, defaults, "");
        ExperimentConfig c;
        c.data = defaults;
        c.data.merge_patch(user);
        c.validate();
        return c;
    }

    static ExperimentConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("config: cannot open '" + path + "'");
        try {
            return from_json(json::parse(in, nullptr, true, true));
        } catch (const json::parse_error& e) {
            throw ConfigError("config: '" + path + "' is not valid JSON: " + e.what());
        }
    }

    static ExperimentConfig defaults_for(const std::string& kind) { return from_json(json{{"kind", kind}}); }
};

// ---------------------------------------------------------------------------
// Jobs

struct JobRecord {
    std::string id;
    std::string status = "pending";  ///< ok | failed
    std::string error;
    double seconds = 0.0;
};

struct Job {
    std::string id;
    std::function<json()> run;
};

/// Runs jobs on at most `workers` threads; results are indexed like `jobs`.
inline std::vector<std::optional<json>> run_jobs(const std::vector<Job>& jobs, int workers, std::vector<JobRecord>& records,
                                                 std::ostream* log = nullptr) {
    std::vector<std::optional<json>> results(jobs.size());
    records.resize(jobs.size());
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            auto& rec = records[i];
            rec.id = jobs[i].id;
            const auto t0 = std::chrono::steady_clock::now();
            try {
                results[i] = jobs[i].run();
                rec.status = "ok";
            } catch (const std::exception& e) {
                rec.status = "failed";
                rec.error = e.what();
            }
            rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (log != nullptr) {
                std::lock_guard<std::mutex> lock(log_mutex);
                *log << "[" << rec.status << "] " << rec.id << " (" << std::fixed << std::setprecision(1) << rec.seconds
                     << " s)" << (rec.error.empty() ? "" : ": " + rec.error) << "\n";
                log->unsetf(std::ios::fixed);
            }
        }
    };
    const int n = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
    std::vector<std::thread> pool;
    for (int i = 1; i < n; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return results;
}

// ---------------------------------------------------------------------------
// Output helpers

struct RunManifest {
    json config;
    std::string version = LRTIM_VERSION;
    std::string started, finished;
    std::vector<JobRecord> jobs;
    std::vector<std::string> outputs;  ///< relative to the run directory

    bool ok() const {
        return std::all_of(jobs.begin(), jobs.end(), [](const JobRecord& j) { return j.status == "ok"; });
    }

    json to_json() const {
        json j;
        j["tool"] = "lrtim";
        j["version"] = version;
        j["config"] = config;
        j["started"] = started;
        j["finished"] = finished;
        j["jobs"] = json::array();
        for (const auto& r : jobs) j["jobs"].push_back({{"id", r.id}, {"status", r.status}, {"error", r.error}, {"seconds", r.seconds}});
        j["outputs"] = outputs;
        return j;
    }

    /// Writes to a temporary file and renames it into place.
    void write(const std::filesystem::path& dir) const {
        const auto tmp = dir / "manifest.json.tmp";
        {
            std::ofstream out(tmp);
            require(static_cast<bool>(out), "manifest: cannot write to '" + dir.string() + "'");
            out << to_json().dump(2) << "\n";
        }
        std::filesystem::rename(tmp, dir / "manifest.json");
    }
};

namespace detail {

inline std::string now_utc() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

inline std::string number(double x) {
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    if (std::isnan(x)) return "nan";
    std::ostringstream s;
    s << std::setprecision(17) << x;
    return s.str();
}

inline json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

/// Collects files written during a run, relative to its directory.
class OutputSink {
  public:
    explicit OutputSink(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_ / "data");
        std::filesystem::create_directories(dir_ / "fits");
    }
    const std::filesystem::path& dir() const { return dir_; }

    void write_text(const std::string& relative, const std::string& text) {
        std::ofstream out(dir_ / relative);
        require(static_cast<bool>(out), "output: cannot write '" + relative + "'");
        out << text;
        files_.push_back(relative);
    }
    void write_json(const std::string& relative, const json& j) { write_text(relative, j.dump(2) + "\n"); }
    const std::vector<std::string>& files() const { return files_; }

  private:
    std::filesystem::path dir_;
    std::vector<std::string> files_;
};

struct ModelPoint {
    double alpha = 0.0;
    double j0 = -1.0;
    CouplingMode mode = CouplingMode::algebraic;

    bool ferro() const { return j0 < 0.0; }
    std::string order() const { return ferro() ? "F" : "AF"; }
    std::string tag() const {
        std::ostringstream s;
        if (mode == CouplingMode::nearest_neighbor)
            s << "nn";
        else
            s << "a" << alpha;
        s << "_" << order();
        return s.str();
    }
    std::string alpha_text() const { return mode == CouplingMode::nearest_neighbor ? "inf" : number(alpha); }
    CouplingSpec spec(int n) const { return {n, j0, alpha, mode}; }
};

inline std::vector<ModelPoint> model_points(const ExperimentConfig& c) {
    const CouplingMode mode = c.get<std::string>("model.mode") == "nearest_neighbor" ? CouplingMode::nearest_neighbor
                                                                                      : CouplingMode::algebraic;
    std::vector<ModelPoint> out;
    for (double a : c.get<std::vector<double>>("model.alphas")) {
        for (double j : c.get<std::vector<double>>("model.j0")) out.push_back({a, j, mode});
        if (mode == CouplingMode::nearest_neighbor) break;  // alpha is irrelevant
    }
    return out;
}

struct CriticalData {
    double g_c = 0.0;
    std::optional<ExponentSet> exponents;
};

inline CriticalScanConfig scan_config(const ExperimentConfig& c, const ModelPoint& m, bool exponents) {
    CriticalScanConfig s;
    s.j0 = m.j0;
    s.alpha = m.alpha;
    s.mode = m.mode;
    s.sizes = c.get<std::vector<int>>("model.sizes");
    s.g_lo = c.get<double>("scan.g_lo");
    s.g_hi = c.get<double>("scan.g_hi");
    s.coarse_step = c.get<double>("scan.coarse_step");
    s.fine_step = c.get<double>("scan.fine_step");
    s.derivative_step = c.get<double>("scan.derivative_step");
    s.exponents = exponents;
    return s;
}

inline json critical_to_json(const ModelPoint& m, const CriticalAnalysis& a) {
    json j;
    j["alpha"] = m.alpha_text();
    j["ferro_or_af"] = m.order();
    j["g_c"] = a.fit.g_c;
    j["g_c_err"] = a.fit.g_c_err();
    j["b"] = a.fit.b;
    j["omega"] = a.fit.omega;
    j["fit_converged"] = a.fit.converged;
    j["crossings"] = json::array();
    for (const auto& c : a.crossings) j["crossings"].push_back({{"N1", c.n1}, {"N2", c.n2}, {"g_star", c.g_star}});
    j["warnings"] = a.warnings;
    json s{{"g_c", a.fit.g_c}, {"g_c_err", a.fit.g_c_err()}};
    if (a.exponents.nu != 0.0) {
        const auto& e = a.exponents;
        j["exponents"] = {{"nu", e.nu},
                          {"nu_err", e.nu_err},
                          {"z", e.z},
                          {"z_err", e.z_err},
                          {"beta_m", e.beta_m},
                          {"beta_m_err", e.beta_m_err},
                          {"beta_lambda", e.beta_lambda},
                          {"beta_lambda_err", e.beta_lambda_err},
                          {"beta_m_over_nu", e.beta_m / e.nu},
                          {"beta_lambda_over_nu", e.beta_lambda / e.nu},
                          {"ai_mu", e.ai_mu()},
                          {"ai_mu_err", e.ai_mu_err()}};
        for (auto it = j["exponents"].begin(); it != j["exponents"].end(); ++it) s[it.key()] = it.value();
    }
    j["summary"] = s;
    return j;
}

inline ExponentSet exponents_from_json(const json& e) {
    ExponentSet x;
    x.nu = e.value("nu", 0.0);
    x.nu_err = e.value("nu_err", 0.0);
    x.z = e.value("z", 0.0);
    x.z_err = e.value("z_err", 0.0);
    x.beta_m = e.value("beta_m", 0.0);
    x.beta_m_err = e.value("beta_m_err", 0.0);
    x.beta_lambda = e.value("beta_lambda", 0.0);
    x.beta_lambda_err = e.value("beta_lambda_err", 0.0);
    return x;
}

inline IntegratorOptions integrator(const ExperimentConfig& c) {
    IntegratorOptions o;
    o.tolerance = c.get<double>("quench.tolerance");
    o.scheme = scheme_from_string(c.get<std::string>("quench.scheme"));
    return o;
}

inline json kz_point_json(const KzPoint& p) {
    json j{{"N", p.sites}, {"tau_q", p.tau_q}};
    for (const auto& q : KzPoint::quantities()) j[q] = p.value(q);
    return j;
}

inline KzPoint kz_point_from_json(const json& j) {
    KzPoint p;
    p.sites = j.at("N").get<int>();
    p.tau_q = j.at("tau_q").get<double>();
    p.p_ex_c = j.at("p_ex_c").get<double>();
    p.e_r_c = j.at("e_r_c").get<double>();
    p.m2_r_c = j.at("m2_r_c").get<double>();
    p.domains_c = j.at("n_do_c").get<double>();
    p.p_ex_final = j.at("p_ex_final").get<double>();
    p.e_r_final = j.at("e_r_final").get<double>();
    p.domains_final = j.at("n_do").get<double>();
    return p;
}

inline json powerlaw_json(const PowerLawFit& f) {
    return {{"exponent", f.exponent},
            {"exponent_err", f.exponent_err},
            {"amplitude", f.amplitude},
            {"amplitude_err", f.amplitude_err},
            {"residual", f.residual},
            {"points", f.points},
            {"window", {num(f.window.lo), num(f.window.hi)}}};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiment runners

class Experiment {
  public:
    Experiment(ExperimentConfig config, std::filesystem::path dir, std::ostream* log)
        : config_(std::move(config)), sink_(std::move(dir)), log_(log) {}

    RunManifest run() {
        RunManifest manifest;
        manifest.config = config_.data;
        manifest.started = detail::now_utc();
        const std::string kind = config_.kind();
        if (kind == "phase-diagram" || kind == "exponents")
            run_critical(kind == "exponents");
        else if (kind == "quench-sweep" || kind == "collapse")
            run_sweep(kind == "collapse");
        else if (kind == "ai-scaling")
            run_ai();
        else if (kind == "domain-dist")
            run_domains();
        else if (kind == "compress")
            run_compress();
        else
            run_circuit();
        manifest.jobs = records_;
        manifest.outputs = sink_.files();
        manifest.finished = detail::now_utc();
        manifest.write(sink_.dir());
        return manifest;
    }

  private:
    std::vector<std::optional<json>> execute(const std::vector<Job>& jobs) {
        std::vector<JobRecord> recs;
        auto out = run_jobs(jobs, config_.workers(), recs, log_);
        records_.insert(records_.end(), recs.begin(), recs.end());
        return out;
    }

    /// g_c (and exponents when `need_exponents`) per model point, from the
    /// config's `critical` list or computed by the scan pipeline.
    std::map<std::string, detail::CriticalData> critical_data(const std::vector<detail::ModelPoint>& models,
                                                              bool need_exponents) {
        std::map<std::string, detail::CriticalData> out;
        std::vector<Job> jobs;
        std::vector<detail::ModelPoint> pending;
        for (const auto& m : models) {
            bool found = false;
            for (const auto& c : config_.data.at("critical")) {
                const bool same_alpha = m.mode == CouplingMode::nearest_neighbor
                                            ? c.at("alpha").is_string() && c.at("alpha").get<std::string>() == "inf"
                                            : c.at("alpha").is_number() && std::abs(c.at("alpha").get<double>() - m.alpha) < 1e-9;
                if (!same_alpha || (c.at("j0").get<double>() < 0.0) != m.ferro()) continue;
                if (need_exponents && !(c.contains("nu") && c.contains("z"))) continue;
                detail::CriticalData d;
                d.g_c = c.at("g_c").get<double>();
                if (c.contains("nu") && c.contains("z")) d.exponents = detail::exponents_from_json(c);
                out[m.tag()] = d;
                found = true;
                break;
            }
            if (found) continue;
            pending.push_back(m);
            jobs.push_back({"critical/" + m.tag(), [this, m, need_exponents] {
                                const auto a = analyze_critical_point(detail::scan_config(config_, m, need_exponents));
                                if (!a.fit.accepted()) throw ConvergenceError("g_c fit rejected: " + a.fit.message, a.fit.residual, a.fit.iterations);
                                return detail::critical_to_json(m, a);
                            }});
        }
        const auto results = execute(jobs);
        for (std::size_t i = 0; i < pending.size(); ++i) {
            if (!results[i]) continue;
            const auto& r = *results[i];
            sink_.write_json("fits/critical_" + pending[i].tag() + ".json", r);
            detail::CriticalData d;
            d.g_c = r.at("g_c").get<double>();
            if (r.contains("exponents")) d.exponents = detail::exponents_from_json(r.at("exponents"));
            out[pending[i].tag()] = d;
        }
        return out;
    }

    void run_critical(bool exponents) {
        const auto models = detail::model_points(config_);
        std::vector<Job> jobs;
        for (const auto& m : models)
            jobs.push_back({"critical/" + m.tag(), [this, m, exponents] {
                                const auto a = analyze_critical_point(detail::scan_config(config_, m, exponents));
                                std::ostringstream csv;
                                a.data.write_csv(csv);
                                json j = detail::critical_to_json(m, a);
                                j["dataset"] = csv.str();
                                return j;
                            }});
        const auto results = execute(jobs);
        std::ostringstream table;
        table << (exponents ? "alpha,ferro_or_af,quantity,value,err\n" : "alpha,ferro_or_af,g_c,g_c_err\n");
        for (std::size_t i = 0; i < models.size(); ++i) {
            if (!results[i]) continue;
            json r = *results[i];
            sink_.write_text("data/binder_" + models[i].tag() + ".csv", r.at("dataset").get<std::string>());
            r.erase("dataset");
            sink_.write_json("fits/critical_" + models[i].tag() + ".json", r);
            const std::string a = models[i].alpha_text(), o = models[i].order();
            if (!exponents) {
                table << a << "," << o << "," << detail::number(r.at("g_c").get<double>()) << ","
                      << detail::number(r.at("g_c_err").get<double>()) << "\n";
                continue;
            }
            table << a << "," << o << ",g_c," << detail::number(r.at("g_c").get<double>()) << ","
                  << detail::number(r.at("g_c_err").get<double>()) << "\n";
            const auto& e = r.at("exponents");
            for (const char* q : {"nu", "z", "beta_m", "beta_lambda", "ai_mu"})
                table << a << "," << o << "," << q << "," << detail::number(e.at(q).get<double>()) << ","
                      << detail::number(e.at(std::string(q) + "_err").get<double>()) << "\n";
        }
        sink_.write_text(exponents ? "data/exponents.csv" : "data/phase_diagram.csv", table.str());
    }

    std::vector<Job> sweep_jobs(const std::vector<detail::ModelPoint>& models, const std::vector<int>& sizes,
                                const std::map<std::string, detail::CriticalData>& critical,
                                std::vector<std::tuple<detail::ModelPoint, int, double>>& keys) {
        std::vector<Job> jobs;
        const auto taus = config_.taus();
        for (const auto& m : models) {
            if (!critical.count(m.tag())) continue;
            const double g_c = critical.at(m.tag()).g_c;
            for (int n : sizes)
                for (double tau : taus) {
                    keys.emplace_back(m, n, tau);
                    std::ostringstream id;
                    id << "quench/" << m.tag() << "/N" << n << "/tau" << tau;
                    jobs.push_back({id.str(), [this, m, n, tau, g_c] {
                                        Hamiltonian h(build_couplings(m.spec(n)), Sector::even, Frame::x);
                                        GroundStateCache cache(h);
                                        KzConfig k;
                                        k.g0 = config_.get<double>("quench.g0");
                                        k.g_c = g_c;
                                        k.integrator = detail::integrator(config_);
                                        k.initial = initial_state_from_string(config_.get<std::string>("quench.initial"));
                                        return detail::kz_point_json(kz_point(cache, k, tau));
                                    }});
                }
        }
        return jobs;
    }

    void run_sweep(bool collapse) {
        const auto models = detail::model_points(config_);
        const auto sizes = config_.get<std::vector<int>>("model.sizes");
        const auto critical = critical_data(models, true);
        std::vector<std::tuple<detail::ModelPoint, int, double>> keys;
        const auto results = execute(sweep_jobs(models, sizes, critical, keys));

        std::ostringstream csv;
        csv << "alpha,ferro_or_af,N,tau_q,quantity,value\n";
        std::map<std::pair<std::string, int>, KZSweep> sweeps;
        for (std::size_t i = 0; i < keys.size(); ++i) {
            if (!results[i]) continue;
            const auto& [m, n, tau] = keys[i];
            const KzPoint p = detail::kz_point_from_json(*results[i]);
            for (const auto& q : KzPoint::quantities())
                csv << m.alpha_text() << "," << m.order() << "," << n << "," << detail::number(tau) << "," << q << ","
                    << detail::number(p.value(q)) << "\n";
            auto& s = sweeps[{m.tag(), n}];
            s.sites = n;
            s.points.push_back(p);
        }
        sink_.write_text("data/sweep.csv", csv.str());

        for (const auto& m : models) {
            if (!critical.count(m.tag())) continue;
            const auto& crit = critical.at(m.tag());
            for (int n : sizes) {
                auto it = sweeps.find({m.tag(), n});
                if (it == sweeps.end()) continue;
                sink_.write_json("fits/kz_" + m.tag() + "_N" + std::to_string(n) + ".json", kz_report(m, it->second, crit));
            }
            if (!collapse) continue;
            std::vector<NoneqSeries> base;
            for (int n : sizes) {
                auto it = sweeps.find({m.tag(), n});
                if (it == sweeps.end()) continue;
                base.push_back({n, it->second.taus(), {}});
            }
            if (base.size() < 2 || !crit.exponents) continue;
            json fits;
            fits["alpha"] = m.alpha_text();
            fits["ferro_or_af"] = m.order();
            fits["nu"] = crit.exponents->nu;
            fits["z"] = crit.exponents->z;
            json summary;
            std::ostringstream ccsv;
            ccsv << "N,tau_q,y,quantity,scaled\n";
            for (const auto& q : config_.get<std::vector<std::string>>("collapse.quantities")) {
                auto series = base;
                for (auto& s : series) s.values = sweeps.at({m.tag(), s.sites}).series(q);
                const auto c = noneq_collapse(series, q, crit.exponents->nu, crit.exponents->z,
                                              config_.get<double>("collapse.y_small"), config_.get<double>("collapse.y_large"));
                const auto theo = theoretical_mu(*crit.exponents, q);
                json f{{"gamma_over_nu", c.gamma_over_nu},
                       {"chi2", c.score.chi2},
                       {"points", c.score.points},
                       {"perturbed_chi2", detail::num(c.perturbed.chi2)},
                       {"ratio", detail::num(c.ratio())},
                       {"mu_theo", theo.value}};
                if (c.small_branch) f["small_y_branch"] = detail::powerlaw_json(*c.small_branch);
                if (c.large_branch) f["large_y_branch"] = detail::powerlaw_json(*c.large_branch);
                fits[q] = f;
                summary[q + ".chi2"] = c.score.chi2;
                summary[q + ".ratio"] = detail::num(c.ratio());
                if (c.small_branch) summary[q + ".small_y_slope"] = c.small_branch->exponent;
                if (c.large_branch) summary[q + ".large_y_slope"] = c.large_branch->exponent;
                for (const auto& curve : c.curves)
                    for (std::size_t i = 0; i < curve.x.size(); ++i)
                        ccsv << curve.sites << "," << detail::number(sweeps.at({m.tag(), curve.sites}).points[i].tau_q) << ","
                             << detail::number(curve.x[i]) << "," << q << "," << detail::number(curve.y[i]) << "\n";
            }
            fits["summary"] = summary;
            sink_.write_json("fits/collapse_" + m.tag() + ".json", fits);
            sink_.write_text("data/collapse_" + m.tag() + ".csv", ccsv.str());
        }
    }

    json kz_report(const detail::ModelPoint& m, const KZSweep& sweep, const detail::CriticalData& crit) {
        json j;
        j["alpha"] = m.alpha_text();
        j["ferro_or_af"] = m.order();
        j["N"] = sweep.sites;
        j["g_c"] = crit.g_c;
        json summary;
        const FitWindow window = config_.window("fit.window");
        const FitWindow adiabatic = config_.window("fit.adiabatic_window");
        for (const std::string q : {"n_do", "p_ex_c", "e_r_c", "m2_r_c"}) {
            json f;
            try {
                const auto fit = kz_fit(sweep, q, window);
                f = detail::powerlaw_json(fit.fit);
                f["mu"] = fit.mu();
                f["mu_err"] = fit.mu_err();
                f["plateau"] = fit.plateau;
                summary["mu." + q] = fit.mu();
                if (crit.exponents && q != "m2_r_c") {
                    const auto theo = theoretical_mu(*crit.exponents, q);
                    f["mu_theo"] = theo.value;
                    f["mu_theo_err"] = theo.err;
                    f["ratio"] = fit.mu() / theo.value;
                    summary["ratio." + q] = fit.mu() / theo.value;
                }
            } catch (const InvalidArgument& e) {
                f["error"] = e.what();
            }
            if (q == "p_ex_c" || q == "e_r_c") {
                try {
                    const auto a = kz_fit(sweep, q, adiabatic);
                    f["adiabatic"] = detail::powerlaw_json(a.fit);
                    summary["adiabatic_slope." + q] = a.mu();
                } catch (const InvalidArgument&) {
                }
            }
            j[q] = f;
        }
        j["summary"] = summary;
        return j;
    }

    void run_ai() {
        const auto models = detail::model_points(config_);
        const auto sizes = config_.get<std::vector<int>>("model.sizes");
        const auto critical = critical_data(models, false);
        const auto taus = config_.taus();
        // Lockstep groups share instantaneous ground states; one group per worker.
        const int groups = std::max(1, std::min<int>(config_.workers(), static_cast<int>(taus.size())));
        struct Key {
            detail::ModelPoint m;
            int n;
            std::vector<double> taus;
        };
        std::vector<Key> keys;
        std::vector<Job> jobs;
        for (const auto& m : models) {
            if (!critical.count(m.tag())) continue;
            const double g_c = critical.at(m.tag()).g_c;
            const double theta = config_.get<double>(m.ferro() ? "ai.theta_ferro" : "ai.theta_antiferro");
            for (int n : sizes)
                for (int gidx = 0; gidx < groups; ++gidx) {
                    std::vector<double> chunk;
                    for (std::size_t i = static_cast<std::size_t>(gidx); i < taus.size(); i += static_cast<std::size_t>(groups))
                        chunk.push_back(taus[i]);
                    keys.push_back({m, n, chunk});
                    jobs.push_back({"ai/" + m.tag() + "/N" + std::to_string(n) + "/group" + std::to_string(gidx),
                                    [this, m, n, chunk, g_c, theta] {
                                        Hamiltonian h(build_couplings(m.spec(n)), Sector::even, Frame::x);
                                        AiScalingConfig a;
                                        a.g0 = config_.get<double>("quench.g0");
                                        a.g_c = g_c;
                                        a.theta = theta;
                                        a.taus = chunk;
                                        a.grid_points = config_.get<int>("ai.grid_points");
                                        a.integrator = detail::integrator(config_);
                                        a.initial = initial_state_from_string(config_.get<std::string>("quench.initial"));
                                        const auto r = ai_scaling(h, a);
                                        json j = json::array();
                                        for (const auto& p : r.points) {
                                            json t = json::array();
                                            for (const auto& [g, f] : r.traces.at(p.tau_q)) t.push_back({g, f});
                                            j.push_back({{"tau_q", p.tau_q},
                                                         {"t_theta", p.t_theta},
                                                         {"g_tilde", p.g_tilde},
                                                         {"distance", p.distance},
                                                         {"adiabatic", p.adiabatic},
                                                         {"trace", t}});
                                        }
                                        return j;
                                    }});
                }
        }
        const auto results = execute(jobs);
        std::ostringstream csv, traces;
        csv << "alpha,ferro_or_af,N,tau_q,quantity,value\n";
        traces << "alpha,ferro_or_af,N,tau_q,g,fidelity\n";
        std::map<std::pair<std::string, int>, std::vector<json>> points;
        for (std::size_t i = 0; i < keys.size(); ++i) {
            if (!results[i]) continue;
            for (const auto& p : *results[i]) points[{keys[i].m.tag(), keys[i].n}].push_back(p);
        }
        for (const auto& m : models)
            for (int n : sizes) {
                auto it = points.find({m.tag(), n});
                if (it == points.end()) continue;
                auto& pts = it->second;
                std::sort(pts.begin(), pts.end(), [](const json& a, const json& b) { return a.at("tau_q").get<double>() < b.at("tau_q").get<double>(); });
                std::vector<double> xs, ys;
                for (const auto& p : pts) {
                    const double tau = p.at("tau_q").get<double>();
                    const std::string prefix = m.alpha_text() + "," + m.order() + "," + std::to_string(n) + "," + detail::number(tau) + ",";
                    for (const char* q : {"t_theta", "g_tilde", "distance"})
                        csv << prefix << q << "," << detail::number(p.at(q).get<double>()) << "\n";
                    csv << prefix << "adiabatic," << (p.at("adiabatic").get<bool>() ? 1 : 0) << "\n";
                    for (const auto& gf : p.at("trace"))
                        traces << prefix << detail::number(gf.at(0).get<double>()) << "," << detail::number(gf.at(1).get<double>()) << "\n";
                    if (!p.at("adiabatic").get<bool>() && p.at("distance").get<double>() > 0.0) {
                        xs.push_back(tau);
                        ys.push_back(p.at("distance").get<double>());
                    }
                }
                json f;
                f["alpha"] = m.alpha_text();
                f["ferro_or_af"] = m.order();
                f["N"] = n;
                f["theta"] = config_.get<double>(m.ferro() ? "ai.theta_ferro" : "ai.theta_antiferro");
                f["g_c"] = critical.at(m.tag()).g_c;
                json summary;
                try {
                    const auto fit = powerlaw_fit(xs, ys, config_.window("ai.window"));
                    f["fit"] = detail::powerlaw_json(fit);
                    f["mu"] = fit.exponent;
                    f["mu_err"] = fit.exponent_err;
                    summary["mu"] = fit.exponent;
                    summary["mu_err"] = fit.exponent_err;
                    const auto& crit = critical.at(m.tag());
                    if (crit.exponents) {
                        f["mu_theo"] = crit.exponents->ai_mu();
                        f["mu_theo_err"] = crit.exponents->ai_mu_err();
                        f["ratio"] = fit.exponent / crit.exponents->ai_mu();
                        summary["mu_theo"] = crit.exponents->ai_mu();
                        summary["ratio"] = fit.exponent / crit.exponents->ai_mu();
                    }
                } catch (const InvalidArgument& e) {
                    f["error"] = e.what();
                }
                f["summary"] = summary;
                sink_.write_json("fits/ai_" + m.tag() + "_N" + std::to_string(n) + ".json", f);
            }
        sink_.write_text("data/ai.csv", csv.str());
        sink_.write_text("data/ai_traces.csv", traces.str());
    }

    void run_domains() {
        const auto models = detail::model_points(config_);
        const auto sizes = config_.get<std::vector<int>>("model.sizes");
        const auto taus = config_.taus();
        std::vector<std::tuple<detail::ModelPoint, int, double>> keys;
        std::vector<Job> jobs;
        for (const auto& m : models)
            for (int n : sizes)
                for (double tau : taus) {
                    keys.emplace_back(m, n, tau);
                    std::ostringstream id;
                    id << "domains/" << m.tag() << "/N" << n << "/tau" << tau;
                    jobs.push_back({id.str(), [this, m, n, tau] {
                                        QuenchProtocol p;
                                        p.g0 = config_.get<double>("quench.g0");
                                        p.tau_q = tau;
                                        p.integrator = detail::integrator(config_);
                                        p.initial = initial_state_from_string(config_.get<std::string>("quench.initial"));
                                        EvolveOptions o;
                                        o.keep_final_state = true;
                                        const auto t = evolve(build_couplings(m.spec(n)), p, o);
                                        const auto d = domain_distribution(*t.final_state, m.ferro() ? Order::ferro : Order::antiferro);
                                        return json{{"probabilities", d.probabilities},
                                                    {"mean", d.mean},
                                                    {"variance", d.variance},
                                                    {"gaussian",
                                                     {{"amplitude", d.gaussian.amplitude},
                                                      {"mean", d.gaussian.mean},
                                                      {"sigma", d.gaussian.sigma},
                                                      {"residual", d.gaussian.residual}}},
                                                    {"exponential",
                                                     {{"amplitude", d.exponential.amplitude},
                                                      {"rate", d.exponential.rate},
                                                      {"residual", d.exponential.residual}}}};
                                    }});
                }
        const auto results = execute(jobs);
        std::ostringstream csv;
        csv << "alpha,ferro_or_af,N,tau_q,n_do,probability\n";
        std::map<std::string, json> fits;
        for (std::size_t i = 0; i < keys.size(); ++i) {
            if (!results[i]) continue;
            const auto& [m, n, tau] = keys[i];
            const auto& r = *results[i];
            const auto p = r.at("probabilities").get<std::vector<double>>();
            for (std::size_t k = 0; k < p.size(); ++k)
                csv << m.alpha_text() << "," << m.order() << "," << n << "," << detail::number(tau) << "," << k + 1 << ","
                    << detail::number(p[k]) << "\n";
            const std::string file = "fits/domains_" + m.tag() + "_N" + std::to_string(n) + ".json";
            auto& f = fits[file];
            f["alpha"] = m.alpha_text();
            f["ferro_or_af"] = m.order();
            f["N"] = n;
            json entry = r;
            entry.erase("probabilities");
            entry["tau_q"] = tau;
            const double ratio = r.at("exponential").at("residual").get<double>() / r.at("gaussian").at("residual").get<double>();
            entry["exponential_over_gaussian"] = detail::num(ratio);
            f["taus"].push_back(entry);
            std::ostringstream key;
            key << "tau" << tau;
            f["summary"][key.str() + ".mean"] = r.at("mean");
            f["summary"][key.str() + ".exp_over_gauss"] = detail::num(ratio);
        }
        sink_.write_text("data/domains.csv", csv.str());
        for (const auto& [file, f] : fits) sink_.write_json(file, f);
    }

    void run_compress() {
        const auto alphas = config_.get<std::vector<double>>("compress.alphas");
        const auto terms = config_.get<std::vector<int>>("compress.terms");
        const int length = config_.get<int>("compress.N");
        CompressionOptions options;
        options.refine = config_.get<bool>("compress.refine");
        std::vector<std::pair<double, int>> keys;
        std::vector<Job> jobs;
        for (double a : alphas)
            for (int n : terms) {
                keys.emplace_back(a, n);
                std::ostringstream id;
                id << "compress/a" << a << "/n" << n;
                jobs.push_back({id.str(), [a, n, length, options] {
                                    const auto fit = fit_exponential_sum(a, length, n, options);
                                    json j = to_json(fit);
                                    j["profile"] = eval_error(fit).errors;
                                    j["summary"] = {{"max_error", fit.max_error}};
                                    return j;
                                }});
            }
        const auto results = execute(jobs);
        std::ostringstream csv, profile;
        csv << "alpha,N,n,max_error,pencil_error\n";
        profile << "alpha,N,n,k,error\n";
        for (std::size_t i = 0; i < keys.size(); ++i) {
            if (!results[i]) continue;
            json r = *results[i];
            const auto [a, n] = keys[i];
            csv << detail::number(a) << "," << length << "," << n << "," << detail::number(r.at("max_error").get<double>()) << ","
                << detail::number(r.at("pencil_error").get<double>()) << "\n";
            const auto errors = r.at("profile").get<std::vector<double>>();
            for (std::size_t k = 0; k < errors.size(); ++k)
                profile << detail::number(a) << "," << length << "," << n << "," << k + 1 << "," << detail::number(errors[k]) << "\n";
            r.erase("profile");
            std::ostringstream file;
            file << "fits/compress_a" << a << "_n" << n << ".json";
            sink_.write_json(file.str(), r);
        }
        sink_.write_text("data/compress.csv", csv.str());
        sink_.write_text("data/compress_profile.csv", profile.str());
    }

    void run_circuit() {
        const int n = config_.get<int>("circuit.N");
        if (n < 2 || n % 2 != 0 || n > 16) throw ConfigError("config: circuit.N must be even and at most 16");
        const CouplingSpec spec{n, config_.get<double>("circuit.j0"), config_.get<double>("circuit.alpha"), CouplingMode::algebraic};
        const double g0 = config_.get<double>("circuit.g0"), tau = config_.get<double>("circuit.tau_q");
        const double step_field = config_.get<double>("circuit.step_field");
        const auto divisions = config_.get<std::vector<int>>("circuit.dt_divisions");
        const auto j = build_couplings(spec);
        const auto field = [g0, tau](double t) { return g0 * (1.0 - t / tau); };
        Hamiltonian h(j, Sector::even, Frame::x);
        const StateVector psi0 = ground_state(h, g0).state;
        const StateVector exact = exact_evolution(j, field, tau, psi0);
        std::vector<Job> jobs;
        for (int d : divisions)
            jobs.push_back({"circuit/dt" + std::to_string(d), [=] {
                                const double dt = tau / d;
                                auto plan = compile_evolution(spec, g0, tau, dt);
                                const auto v = verify(plan, psi0, exact);
                                const double step = trotter_step_error(j, step_field, dt, psi0);
                                json r{{"divisions", d},     {"dt", plan.dt},          {"steps", plan.steps},
                                       {"depth", plan.max_depth()}, {"terms", plan.terms}, {"deficit", v.deficit},
                                       {"norm_error", v.norm_error}, {"step_error", step}};
                                if (d == divisions.front()) r["plan"] = to_json(plan);
                                return r;
                            }});
        const auto results = execute(jobs);
        std::ostringstream csv;
        csv << "dt,steps,depth,deficit,step_error\n";
        std::vector<double> dts, deficits, steps;
        json fits;
        for (const auto& r : results) {
            if (!r) continue;
            csv << detail::number(r->at("dt").get<double>()) << "," << r->at("steps").get<long>() << "," << r->at("depth").get<int>()
                << "," << detail::number(r->at("deficit").get<double>()) << "," << detail::number(r->at("step_error").get<double>())
                << "\n";
            dts.push_back(r->at("dt").get<double>());
            deficits.push_back(r->at("deficit").get<double>());
            steps.push_back(r->at("step_error").get<double>());
            if (r->contains("plan")) sink_.write_json("fits/plan.json", r->at("plan"));
            json row = *r;
            row.erase("plan");
            fits["runs"].push_back(row);
        }
        sink_.write_text("data/circuit.csv", csv.str());
        fits["N"] = n;
        fits["alpha"] = spec.alpha;
        fits["J0"] = spec.j0;
        json summary;
        try {
            const auto sf = powerlaw_fit(dts, steps);
            fits["step_error_fit"] = detail::powerlaw_json(sf);
            summary["step_error_order"] = sf.exponent;
            const auto df = powerlaw_fit(dts, deficits);
            fits["deficit_fit"] = detail::powerlaw_json(df);
            summary["deficit_order"] = df.exponent;
        } catch (const InvalidArgument& e) {
            fits["error"] = e.what();
        }
        fits["summary"] = summary;
        sink_.write_json("fits/circuit.json", fits);
    }

    ExperimentConfig config_;
    detail::OutputSink sink_;
    std::ostream* log_;
    std::vector<JobRecord> records_;
};

/// Executes a configuration into <output>/<name> (or `out` when given).
inline RunManifest run(const ExperimentConfig& config, const std::optional<std::filesystem::path>& out = std::nullopt,
                       std::ostream* log = nullptr) {
    const std::filesystem::path dir = out ? *out : std::filesystem::path(config.get<std::string>("output")) / config.name();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("output directory '" + dir.string() + "' is not writable: " + ec.message());
    Experiment e(config, dir, log);
    return e.run();
}

struct Report {
    json summary;
    std::string table;
};

/// Summary of a finished run: every fit file's `summary` entries.
inline Report report(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path)) throw InvalidArgument("report: no manifest.json in '" + dir.string() + "'");
    std::ifstream in(manifest_path);
    const json manifest = json::parse(in);
    Report r;
    r.summary["kind"] = manifest.at("config").at("kind");
    r.summary["version"] = manifest.value("version", "");
    int failed = 0;
    for (const auto& j : manifest.at("jobs")) failed += j.at("status").get<std::string>() == "ok" ? 0 : 1;
    r.summary["jobs"] = manifest.at("jobs").size();
    r.summary["failed_jobs"] = failed;
    std::ostringstream t;
    t << "run: " << dir.string() << " (" << r.summary["kind"].get<std::string>() << ", " << manifest.at("jobs").size()
      << " jobs, " << failed << " failed)\n";
    t << std::left << std::setw(40) << "file" << std::setw(34) << "quantity" << "value\n";
    for (const auto& f : manifest.at("outputs")) {
        const std::string name = f.get<std::string>();
        if (name.rfind("fits/", 0) != 0 || name.find(".json") == std::string::npos) continue;
        std::ifstream fin(dir / name);
        if (!fin) continue;
        const json fit = json::parse(fin);
        if (!fit.contains("summary")) continue;
        r.summary["fits"][name] = fit.at("summary");
        for (auto it = fit.at("summary").begin(); it != fit.at("summary").end(); ++it) {
            std::ostringstream v;
            if (it.value().is_number())
                v << std::setprecision(6) << it.value().get<double>();
            else
                v << it.value().dump();
            t << std::left << std::setw(40) << name << std::setw(34) << it.key() << v.str() << "\n";
        }
    }
    r.table = t.str();
    {
        std::ofstream out(dir / "summary.json");
        out << r.summary.dump(2) << "\n";
    }
    {
        std::ofstream out(dir / "summary.txt");
        out << r.table;
    }
    return r;
}

}  // namespace lrtim

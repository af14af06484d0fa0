#include "taotf/bench.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace taotf::bench {

namespace {

const std::vector<std::string> kAllModes = {"plain", "srip_only", "orth_init_only", "hard",
                                            "taotf"};

struct KeyValue {
    std::string value;
    int line = 0;
    bool used = false;
};

using Section = std::map<std::string, KeyValue>;

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

[[noreturn]] void fail(const std::string& origin, int line, const std::string& msg) {
    throw ConfigError(origin + ":" + std::to_string(line) + ": " + msg);
}

class Parsed {
public:
    Parsed(const std::string& text, std::string origin) : origin_(std::move(origin)) {
        std::istringstream is(text);
        std::string line;
        std::string section = "experiment";
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') fail(origin_, lineno, "unterminated section header");
                section = trim(line.substr(1, line.size() - 2));
                sections_[section];
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) fail(origin_, lineno, "expected key = value");
            const std::string key = trim(line.substr(0, eq));
            if (key.empty()) fail(origin_, lineno, "empty key");
            sections_[section][key] = {trim(line.substr(eq + 1)), lineno, false};
        }
    }

    bool has(const std::string& section, const std::string& key) const {
        const auto s = sections_.find(section);
        return s != sections_.end() && s->second.count(key);
    }

    template <typename T>
    T get(const std::string& section, const std::string& key, T fallback) {
        auto s = sections_.find(section);
        if (s == sections_.end()) return fallback;
        auto k = s->second.find(key);
        if (k == s->second.end()) return fallback;
        k->second.used = true;
        return convert<T>(section, key, k->second);
    }

    std::vector<std::string> tokens(const std::string& section, const std::string& key) {
        std::vector<std::string> out;
        auto s = sections_.find(section);
        if (s == sections_.end()) return out;
        auto k = s->second.find(key);
        if (k == s->second.end()) return out;
        k->second.used = true;
        std::istringstream is(k->second.value);
        std::string tok;
        while (is >> tok) {
            if (!tok.empty() && tok.back() == ',') tok.pop_back();
            if (!tok.empty()) out.push_back(tok);
        }
        return out;
    }

    const Section* section(const std::string& name) const {
        auto s = sections_.find(name);
        return s == sections_.end() ? nullptr : &s->second;
    }

    void mark_used(const std::string& section, const std::string& key) {
        sections_[section][key].used = true;
    }

    void check_all_used() const {
        for (const auto& [sec, kv] : sections_)
            for (const auto& [key, entry] : kv)
                if (!entry.used)
                    fail(origin_, entry.line, "unknown key '" + key + "' in section [" + sec + "]");
    }

    const std::string& origin() const { return origin_; }

private:
    template <typename T>
    T convert(const std::string& section, const std::string& key, const KeyValue& kv) {
        std::istringstream is(kv.value);
        T v;
        if constexpr (std::is_same_v<T, bool>) {
            if (kv.value == "true" || kv.value == "1") return true;
            if (kv.value == "false" || kv.value == "0") return false;
            fail(origin_, kv.line, "field '" + section + "." + key + "': expected true/false");
        } else if constexpr (std::is_same_v<T, std::string>) {
            return kv.value;
        } else {
            if (!(is >> v) || !(is >> std::ws).eof())
                fail(origin_, kv.line,
                     "field '" + section + "." + key + "': cannot parse '" + kv.value + "'");
            return v;
        }
    }

    std::string origin_;
    std::map<std::string, Section> sections_;
};

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
    Parsed p(text, origin);
    ExperimentConfig cfg;

    cfg.model = p.get<std::string>("experiment", "model", cfg.model);
    cfg.output_dir = p.get<std::string>("experiment", "output_dir", cfg.output_dir);
    if (p.has("experiment", "seeds")) {
        cfg.seeds.clear();
        for (const std::string& tok : p.tokens("experiment", "seeds"))
            cfg.seeds.push_back(std::stoull(tok));
    }
    if (p.has("experiment", "modes")) cfg.modes = p.tokens("experiment", "modes");
    for (const std::string& m : cfg.modes) trainer::mode_from_string(m);  // validate early
    if (cfg.seeds.empty()) throw ConfigError(origin + ": field 'experiment.seeds': must be non-empty");

    cfg.dataset.path = p.get<std::string>("dataset", "path", "");
    cfg.dataset.n = p.get<int>("dataset", "n", cfg.dataset.n);
    cfg.dataset.h = p.get<int>("dataset", "h", cfg.dataset.h);
    cfg.dataset.w = p.get<int>("dataset", "w", cfg.dataset.w);
    cfg.dataset.n_classes = p.get<int>("dataset", "classes", cfg.dataset.n_classes);
    cfg.dataset.seed = p.get<std::uint64_t>("dataset", "seed", cfg.dataset.seed);
    if (!cfg.dataset.path.empty() && !std::filesystem::exists(cfg.dataset.path))
        throw ConfigError(origin + ": field 'dataset.path': no such file " + cfg.dataset.path);

    trainer::TrainConfig& t = cfg.train;
    t.mode = trainer::mode_from_string(p.get<std::string>("train", "mode", to_string(t.mode)));
    t.lr = p.get<double>("train", "lr", t.lr);
    t.weight_decay = p.get<double>("train", "weight_decay", t.weight_decay);
    t.epochs = p.get<int>("train", "epochs", t.epochs);
    t.batch_size = p.get<int>("train", "batch_size", t.batch_size);
    t.label_smoothing = p.get<double>("train", "label_smoothing", t.label_smoothing);
    t.seed = p.get<std::uint64_t>("train", "seed", t.seed);
    for (const std::string& tok : p.tokens("train", "layer_optout"))
        t.layer_optout.insert(std::stoi(tok));

    t.srip.lambda = p.get<double>("srip", "lambda", t.srip.lambda);
    t.srip.power_iters = p.get<int>("srip", "power_iters", t.srip.power_iters);
    t.srip.exact_mode = p.get<bool>("srip", "exact_mode", t.srip.exact_mode);
    t.srip.seed = p.get<std::uint64_t>("srip", "seed", t.srip.seed);

    t.pdoi.gamma = p.get<double>("pdoi", "gamma", t.pdoi.gamma);
    t.pdoi.max_iters = p.get<int>("pdoi", "max_iters", t.pdoi.max_iters);
    t.pdoi.rel_tol = p.get<double>("pdoi", "rel_tol", t.pdoi.rel_tol);
    t.pdoi.gradient_sign = p.get<int>("pdoi", "gradient_sign", t.pdoi.gradient_sign);
    t.pdoi.calib_batch = p.get<int>("pdoi", "calib_batch", t.pdoi.calib_batch);
    t.pdoi.seed = p.get<std::uint64_t>("pdoi", "seed", t.pdoi.seed);

    const std::uint64_t corr_seed =
        p.get<std::uint64_t>("corruptions", "seed", 0);
    if (const Section* cs = p.section("corruptions")) {
        for (const auto& [key, kv] : *cs) {
            if (key == "seed") continue;
            robustness::CorruptionSpec spec;
            try {
                spec.kind = robustness::corruption_kind_from_string(key);
            } catch (const std::exception& e) {
                fail(origin, kv.line, e.what());
            }
            spec.severity = std::stod(kv.value);
            spec.seed = corr_seed;
            cfg.corruptions.push_back(spec);
            p.mark_used("corruptions", key);
        }
    }
    if (cfg.corruptions.empty()) cfg.corruptions = robustness::default_corruptions(corr_seed);

    p.check_all_used();
    return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str(), path);
}

robustness::Dataset load_or_synthesize(const DatasetSpec& spec) {
    if (!spec.path.empty()) {
        robustness::Dataset data = robustness::load_dataset(spec.path);
        robustness::make_splits(data, spec.seed ^ 0x9E3779B97F4A7C15ULL);
        return data;
    }
    return robustness::synthesize_dataset(spec.n, spec.h, spec.w, spec.n_classes, spec.seed);
}

BenchResult run_bench(const ExperimentConfig& cfg) {
    const std::vector<std::string>& modes = cfg.modes.empty() ? kAllModes : cfg.modes;

    BenchResult result;
    for (const auto& spec : cfg.corruptions) result.kinds.push_back(robustness::to_string(spec.kind));
    result.cells.resize(modes.size() * cfg.seeds.size());

    int max_threads = static_cast<int>(std::thread::hardware_concurrency());
    if (const char* env = std::getenv("TAOTF_THREADS")) max_threads = std::max(1, std::atoi(env));
    const int n_cells = static_cast<int>(result.cells.size());
    const int n_threads = std::max(1, std::min(max_threads, n_cells));

    std::atomic<int> next{0};
    std::atomic<bool> failed{false};
    std::string error_msg;
    std::mutex error_mutex;

    auto worker = [&] {
        for (int cell = next.fetch_add(1); cell < n_cells; cell = next.fetch_add(1)) {
            if (failed.load()) return;
            const std::size_t mi = static_cast<std::size_t>(cell) / cfg.seeds.size();
            const std::size_t si = static_cast<std::size_t>(cell) % cfg.seeds.size();
            try {
                const std::uint64_t seed = cfg.seeds[si];
                trainer::TrainConfig tc = cfg.train;
                tc.mode = trainer::mode_from_string(modes[mi]);
                tc.seed = seed;
                tc.srip.seed = seed;
                tc.pdoi.seed = seed;

                robustness::Dataset data = load_or_synthesize(cfg.dataset);
                nn::Network net = nn::make_network(
                    cfg.model, {1, data.h, data.w}, data.n_classes, seed);
                trainer::train(net, data, tc);

                BenchCell& out = result.cells[cell];
                out.mode = modes[mi];
                out.seed = seed;
                out.table = robustness::robustness_table(net, data, cfg.corruptions);
            } catch (const std::exception& e) {
                std::scoped_lock lock(error_mutex);
                error_msg = e.what();
                failed.store(true);
            }
        }
    };

    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failed.load()) throw std::runtime_error("bench cell failed: " + error_msg);
    return result;
}

namespace {

std::string fmt_acc(double v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

std::string bench_csv(const BenchResult& result) {
    std::string out = "mode,seed,clean";
    for (const std::string& kind : result.kinds) out += ',' + kind;
    out += '\n';

    std::string cur_mode;
    std::vector<double> mean;
    int mean_count = 0;
    auto flush_mean = [&] {
        if (mean_count == 0) return;
        out += cur_mode + ",mean";
        for (double v : mean) out += ',' + fmt_acc(v / mean_count);
        out += '\n';
    };

    for (const BenchCell& cell : result.cells) {
        if (cell.mode != cur_mode) {
            flush_mean();
            cur_mode = cell.mode;
            mean.assign(1 + result.kinds.size(), 0.0);
            mean_count = 0;
        }
        out += cell.mode + ',' + std::to_string(cell.seed) + ',' +
               fmt_acc(cell.table.clean_accuracy);
        mean[0] += cell.table.clean_accuracy;
        for (std::size_t k = 0; k < cell.table.rows.size(); ++k) {
            out += ',' + fmt_acc(cell.table.rows[k].accuracy);
            mean[1 + k] += cell.table.rows[k].accuracy;
        }
        out += '\n';
        ++mean_count;
    }
    flush_mean();
    return out;
}

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string manifest_json(const ExperimentConfig& cfg, const std::string& config_text) {
    nlohmann::json j;
    char hash[32];
    std::snprintf(hash, sizeof(hash), "%016llx",
                  static_cast<unsigned long long>(fnv1a(config_text)));
    j["config_fnv1a"] = hash;
    j["config"] = config_text;
    j["model"] = cfg.model;
    j["seeds"] = cfg.seeds;
    j["modes"] = cfg.modes.empty() ? kAllModes : cfg.modes;
    j["artifact_version"] = "1.0.0";
    j["formats"] = {{"checkpoint", "TAOTF1"}, {"dataset", "TAOTF-DS v1"}};
    return j.dump(2) + "\n";
}

void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("cannot open " + tmp);
        os << content;
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace taotf::bench

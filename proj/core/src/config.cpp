#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "flatmin/csv.hpp"
#include "flatmin/error.hpp"
#include "flatmin/harness.hpp"
#include "flatmin/rng.hpp"

namespace flatmin {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string tok;
    std::stringstream ss(line);
    while (std::getline(ss, tok, ',')) out.push_back(tok);
    return out;
}

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

double to_double(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        throw ParseError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

int to_int(const std::string& v, const std::string& key) {
    const double x = to_double(v, key);
    return static_cast<int>(x);
}

std::vector<double> to_list(const std::string& v, const std::string& key) {
    std::vector<double> out;
    for (const auto& tok : split_csv_line(v)) out.push_back(to_double(trim(tok), key));
    return out;
}

bool to_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ParseError("config key '" + key + "': expected true/false, got '" + v + "'");
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"dataset.kind", [](auto& c, auto& k, auto& v) { (void)k; c.dataset.kind = v; }},
        {"dataset.synthetic.kind",
         [](auto& c, auto& k, auto& v) { (void)k; c.dataset.synthetic_kind = v; }},
        {"dataset.synthetic.n_train",
         [](auto& c, auto& k, auto& v) { c.dataset.n_train = static_cast<std::size_t>(to_double(v, k)); }},
        {"dataset.synthetic.n_test",
         [](auto& c, auto& k, auto& v) { c.dataset.n_test = static_cast<std::size_t>(to_double(v, k)); }},
        {"dataset.synthetic.d",
         [](auto& c, auto& k, auto& v) { c.dataset.d = static_cast<std::size_t>(to_double(v, k)); }},
        {"dataset.synthetic.classes",
         [](auto& c, auto& k, auto& v) { c.dataset.classes = static_cast<std::size_t>(to_double(v, k)); }},
        {"dataset.csv.train", [](auto& c, auto& k, auto& v) { (void)k; c.dataset.csv_train = v; }},
        {"dataset.csv.test", [](auto& c, auto& k, auto& v) { (void)k; c.dataset.csv_test = v; }},
        {"dataset.idx.train_images",
         [](auto& c, auto& k, auto& v) { (void)k; c.dataset.idx_train_images = v; }},
        {"dataset.idx.train_labels",
         [](auto& c, auto& k, auto& v) { (void)k; c.dataset.idx_train_labels = v; }},
        {"dataset.idx.test_images",
         [](auto& c, auto& k, auto& v) { (void)k; c.dataset.idx_test_images = v; }},
        {"dataset.idx.test_labels",
         [](auto& c, auto& k, auto& v) { (void)k; c.dataset.idx_test_labels = v; }},
        {"noise.label_alpha",
         [](auto& c, auto& k, auto& v) { c.dataset.label_noise_alpha = to_double(v, k); }},
        {"noise.data_sigma",
         [](auto& c, auto& k, auto& v) { c.dataset.data_noise_sigma = to_double(v, k); }},
        {"model.hidden",
         [](auto& c, auto& k, auto& v) {
             c.model.hidden.clear();
             for (double x : to_list(v, k)) c.model.hidden.push_back(static_cast<std::size_t>(x));
         }},
        {"model.activation",
         [](auto& c, auto& k, auto& v) {
             if (v == "relu") c.model.activation = Activation::relu;
             else if (v == "identity") c.model.activation = Activation::identity;
             else throw ParseError("config key '" + k + "': unknown activation '" + v + "'");
         }},
        {"train.batch_size",
         [](auto& c, auto& k, auto& v) { c.batch_size = static_cast<std::size_t>(to_double(v, k)); }},
        {"optimizer.name", [](auto& c, auto& k, auto& v) { (void)k; c.optimizer.name = v; }},
        {"optimizer.lr", [](auto& c, auto& k, auto& v) { c.optimizer.lr = to_double(v, k); }},
        {"optimizer.momentum",
         [](auto& c, auto& k, auto& v) { c.optimizer.momentum = to_double(v, k); }},
        {"optimizer.weight_decay",
         [](auto& c, auto& k, auto& v) { c.optimizer.weight_decay = to_double(v, k); }},
        {"optimizer.lpf.gamma0",
         [](auto& c, auto& k, auto& v) { c.optimizer.lpf.gamma0 = to_double(v, k); }},
        {"optimizer.lpf.alpha",
         [](auto& c, auto& k, auto& v) { c.optimizer.lpf.alpha = to_double(v, k); }},
        {"optimizer.lpf.M", [](auto& c, auto& k, auto& v) { c.optimizer.lpf.M = to_int(v, k); }},
        {"optimizer.lpf.sigma_mode",
         [](auto& c, auto& k, auto& v) {
             if (v == "norm") c.optimizer.lpf.sigma_mode = SigmaMode::norm;
             else if (v == "squared_norm") c.optimizer.lpf.sigma_mode = SigmaMode::squared_norm;
             else throw ParseError("config key '" + k + "': unknown sigma mode '" + v + "'");
         }},
        {"optimizer.sam.rho",
         [](auto& c, auto& k, auto& v) { c.optimizer.sam_rho = to_double(v, k); }},
        {"optimizer.entropy.L",
         [](auto& c, auto& k, auto& v) { c.optimizer.entropy.L = to_int(v, k); }},
        {"optimizer.entropy.gamma",
         [](auto& c, auto& k, auto& v) { c.optimizer.entropy.gamma = to_double(v, k); }},
        {"optimizer.entropy.eta",
         [](auto& c, auto& k, auto& v) { c.optimizer.entropy.eta_inner = to_double(v, k); }},
        {"optimizer.entropy.eps",
         [](auto& c, auto& k, auto& v) { c.optimizer.entropy.eps_noise = to_double(v, k); }},
        {"optimizer.entropy.alpha_avg",
         [](auto& c, auto& k, auto& v) { c.optimizer.entropy.alpha_avg = to_double(v, k); }},
        {"optimizer.entropy.outer_lr_scale",
         [](auto& c, auto& k, auto& v) { c.optimizer.entropy.outer_lr_scale = to_double(v, k); }},
        {"stop.loss_threshold",
         [](auto& c, auto& k, auto& v) { c.stop.loss_threshold = to_double(v, k); }},
        {"stop.max_epochs",
         [](auto& c, auto& k, auto& v) { c.stop.max_epochs = to_int(v, k); }},
        {"measures.list",
         [](auto& c, auto& k, auto& v) {
             (void)k;
             c.measures.list.clear();
             for (const auto& tok : split_csv_line(v))
                 c.measures.list.push_back(measure_from_string(trim(tok)));
         }},
        {"measures.lpf.sigma",
         [](auto& c, auto& k, auto& v) { c.measures.lpf_sigma = to_double(v, k); }},
        {"measures.lpf.M", [](auto& c, auto& k, auto& v) { c.measures.lpf_M = to_int(v, k); }},
        {"measures.eps.epsilon",
         [](auto& c, auto& k, auto& v) { c.measures.epsilon = to_double(v, k); }},
        {"measures.psi", [](auto& c, auto& k, auto& v) { c.measures.psi = to_double(v, k); }},
        {"measures.pac_bayes.M",
         [](auto& c, auto& k, auto& v) { c.measures.pac_bayes_M = to_int(v, k); }},
        {"measures.pac_bayes.delta",
         [](auto& c, auto& k, auto& v) { c.measures.pac_bayes_delta = to_double(v, k); }},
        {"measures.lanczos.k",
         [](auto& c, auto& k, auto& v) { c.measures.lanczos_k = to_int(v, k); }},
        {"measures.spectrum.probes",
         [](auto& c, auto& k, auto& v) { c.measures.spectrum_probes = to_int(v, k); }},
        {"measures.frobenius.M",
         [](auto& c, auto& k, auto& v) { c.measures.frobenius_M = to_int(v, k); }},
        {"measures.le.L", [](auto& c, auto& k, auto& v) { c.measures.le_L = to_int(v, k); }},
        {"measures.le.gamma",
         [](auto& c, auto& k, auto& v) { c.measures.le_gamma = to_double(v, k); }},
        {"measures.le.eta", [](auto& c, auto& k, auto& v) { c.measures.le_eta = to_double(v, k); }},
        {"measures.le.eps", [](auto& c, auto& k, auto& v) { c.measures.le_eps = to_double(v, k); }},
        {"measures.le.alpha_avg",
         [](auto& c, auto& k, auto& v) { c.measures.le_alpha_avg = to_double(v, k); }},
        {"measures.on_nonconverged",
         [](auto& c, auto& k, auto& v) { c.measures.on_nonconverged = to_bool(v, k); }},
        {"seeds",
         [](auto& c, auto& k, auto& v) {
             c.seeds.clear();
             for (double x : to_list(v, k)) c.seeds.push_back(static_cast<std::uint64_t>(x));
             if (c.seeds.empty()) throw ParseError("config key 'seeds': needs at least one seed");
         }},
        {"sweep.axis", [](auto& c, auto& k, auto& v) { (void)k; c.sweep.axis = v; }},
        {"sweep.values", [](auto& c, auto& k, auto& v) { c.sweep.values = to_list(v, k); }},
        {"sweep.param", [](auto& c, auto& k, auto& v) { (void)k; c.sweep.param = v; }},
        {"output.dir", [](auto& c, auto& k, auto& v) { (void)k; c.output_dir = v; }},
    };
    return table;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError(origin + ": expected 'key = value' at line " +
                             std::to_string(line_no));
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = setters().find(key);
        if (it == setters().end())
            throw ParseError(origin + ": unknown config key '" + key + "' at line " +
                             std::to_string(line_no));
        it->second(cfg, key, value);
    }
    return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path);
}

void apply_config_value(ExperimentConfig& cfg, const std::string& key, double value) {
    static const std::map<std::string, void (*)(ExperimentConfig&, double)> numeric = {
        {"optimizer.lr", [](ExperimentConfig& c, double v) { c.optimizer.lr = v; }},
        {"optimizer.momentum", [](ExperimentConfig& c, double v) { c.optimizer.momentum = v; }},
        {"optimizer.weight_decay",
         [](ExperimentConfig& c, double v) { c.optimizer.weight_decay = v; }},
        {"optimizer.lpf.gamma0", [](ExperimentConfig& c, double v) { c.optimizer.lpf.gamma0 = v; }},
        {"optimizer.lpf.alpha", [](ExperimentConfig& c, double v) { c.optimizer.lpf.alpha = v; }},
        {"optimizer.lpf.M",
         [](ExperimentConfig& c, double v) { c.optimizer.lpf.M = static_cast<int>(v); }},
        {"optimizer.sam.rho", [](ExperimentConfig& c, double v) { c.optimizer.sam_rho = v; }},
        {"train.batch_size",
         [](ExperimentConfig& c, double v) { c.batch_size = static_cast<std::size_t>(v); }},
        {"stop.loss_threshold", [](ExperimentConfig& c, double v) { c.stop.loss_threshold = v; }},
        {"noise.label_alpha",
         [](ExperimentConfig& c, double v) { c.dataset.label_noise_alpha = v; }},
        {"noise.data_sigma",
         [](ExperimentConfig& c, double v) { c.dataset.data_noise_sigma = v; }},
    };
    const auto it = numeric.find(key);
    if (it == numeric.end())
        throw ConfigError("'" + key + "' is not a sweepable numeric config key");
    it->second(cfg, value);
}

namespace {

void serialize(std::ostream& out, const ExperimentConfig& c) {
    out << "dataset.kind = " << c.dataset.kind << '\n'
        << "dataset.synthetic.kind = " << c.dataset.synthetic_kind << '\n'
        << "dataset.synthetic.n_train = " << c.dataset.n_train << '\n'
        << "dataset.synthetic.n_test = " << c.dataset.n_test << '\n'
        << "dataset.synthetic.d = " << c.dataset.d << '\n'
        << "dataset.synthetic.classes = " << c.dataset.classes << '\n'
        << "dataset.csv.train = " << c.dataset.csv_train << '\n'
        << "dataset.csv.test = " << c.dataset.csv_test << '\n'
        << "dataset.idx.train_images = " << c.dataset.idx_train_images << '\n'
        << "dataset.idx.train_labels = " << c.dataset.idx_train_labels << '\n'
        << "dataset.idx.test_images = " << c.dataset.idx_test_images << '\n'
        << "dataset.idx.test_labels = " << c.dataset.idx_test_labels << '\n'
        << "noise.label_alpha = " << fmt_double(c.dataset.label_noise_alpha) << '\n'
        << "noise.data_sigma = " << fmt_double(c.dataset.data_noise_sigma) << '\n';
    out << "model.hidden =";
    for (std::size_t h : c.model.hidden) out << ' ' << h;
    out << '\n' << "model.activation = "
        << (c.model.activation == Activation::relu ? "relu" : "identity") << '\n'
        << "train.batch_size = " << c.batch_size << '\n'
        << "optimizer.name = " << c.optimizer.name << '\n'
        << "optimizer.lr = " << fmt_double(c.optimizer.lr) << '\n'
        << "optimizer.momentum = " << fmt_double(c.optimizer.momentum) << '\n'
        << "optimizer.weight_decay = " << fmt_double(c.optimizer.weight_decay) << '\n'
        << "optimizer.lpf.gamma0 = " << fmt_double(c.optimizer.lpf.gamma0) << '\n'
        << "optimizer.lpf.alpha = " << fmt_double(c.optimizer.lpf.alpha) << '\n'
        << "optimizer.lpf.M = " << c.optimizer.lpf.M << '\n'
        << "optimizer.lpf.sigma_mode = "
        << (c.optimizer.lpf.sigma_mode == SigmaMode::norm ? "norm" : "squared_norm") << '\n'
        << "optimizer.sam.rho = " << fmt_double(c.optimizer.sam_rho) << '\n'
        << "optimizer.entropy.L = " << c.optimizer.entropy.L << '\n'
        << "optimizer.entropy.gamma = " << fmt_double(c.optimizer.entropy.gamma) << '\n'
        << "optimizer.entropy.eta = " << fmt_double(c.optimizer.entropy.eta_inner) << '\n'
        << "optimizer.entropy.eps = " << fmt_double(c.optimizer.entropy.eps_noise) << '\n'
        << "optimizer.entropy.alpha_avg = " << fmt_double(c.optimizer.entropy.alpha_avg) << '\n'
        << "stop.loss_threshold = " << fmt_double(c.stop.loss_threshold) << '\n'
        << "stop.max_epochs = " << c.stop.max_epochs << '\n';
    out << "measures.list =";
    for (MeasureKind m : c.measures.list) out << ' ' << to_string(m);
    out << '\n' << "measures.lpf.sigma = " << fmt_double(c.measures.lpf_sigma) << '\n'
        << "measures.lpf.M = " << c.measures.lpf_M << '\n'
        << "measures.eps.epsilon = " << fmt_double(c.measures.epsilon) << '\n'
        << "measures.psi = " << fmt_double(c.measures.psi) << '\n'
        << "measures.pac_bayes.M = " << c.measures.pac_bayes_M << '\n'
        << "measures.pac_bayes.delta = " << fmt_double(c.measures.pac_bayes_delta) << '\n'
        << "measures.lanczos.k = " << c.measures.lanczos_k << '\n'
        << "measures.spectrum.probes = " << c.measures.spectrum_probes << '\n'
        << "measures.frobenius.M = " << c.measures.frobenius_M << '\n'
        << "measures.le.L = " << c.measures.le_L << '\n'
        << "measures.le.gamma = "
        << (c.measures.le_gamma ? fmt_double(*c.measures.le_gamma) : "unset") << '\n'
        << "measures.le.eta = " << fmt_double(c.measures.le_eta) << '\n'
        << "measures.le.eps = " << fmt_double(c.measures.le_eps) << '\n'
        << "measures.le.alpha_avg = " << fmt_double(c.measures.le_alpha_avg) << '\n'
        << "measures.on_nonconverged = " << (c.measures.on_nonconverged ? "true" : "false")
        << '\n';
    out << "seeds =";
    for (std::uint64_t s : c.seeds) out << ' ' << s;
    out << '\n' << "sweep.axis = " << c.sweep.axis << '\n';
    out << "sweep.values =";
    for (double v : c.sweep.values) out << ' ' << fmt_double(v);
    out << '\n' << "sweep.param = " << c.sweep.param << '\n';
}

}  // namespace

std::string config_hash(const ExperimentConfig& cfg) {
    std::ostringstream ss;
    serialize(ss, cfg);
    const std::string text = ss.str();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) h = (h ^ ch) * 0x100000001b3ULL;  // FNV-1a
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace flatmin

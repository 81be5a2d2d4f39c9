#include "mmref/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mmref/error.hpp"

namespace mmref {

void AblationFlags::validate() const {
    if ((global_fusion || local_rec) && !guided) {
        throw DomainError("flags: GF and LR rely on RGRL; enable RGRL or disable both");
    }
    if (refine && !trains_bank()) throw DomainError("flags: REFINE requires a bank trained by GF or LR");
}

void RunConfig::validate() const {
    corpus.validate();
    encoder.validate();
    loss.validate();
    flags.validate();
    if (encoder.vocab_size < corpus.vocab_size()) {
        throw DomainError("encoder vocab_size " + std::to_string(encoder.vocab_size) + " < corpus vocabulary " +
                          std::to_string(corpus.vocab_size()));
    }
    if (encoder.max_seq_len < corpus.max_tokens()) throw DomainError("encoder max_seq_len shorter than corpus texts");
    if (encoder.image_input_dim != corpus.image_dim()) {
        throw DomainError("encoder image_input_dim " + std::to_string(encoder.image_input_dim) +
                          " != corpus image dim " + std::to_string(corpus.image_dim()));
    }
    if (identities_per_batch < 2) throw DomainError("identities_per_batch must be >= 2");
    if (identities_per_batch > corpus.train_identities) throw DomainError("identities_per_batch exceeds train identities");
    if (pairs_per_identity < 1 || pairs_per_identity > corpus.pairs_per_identity) {
        throw DomainError("pairs_per_identity must be in [1, corpus pairs_per_identity]");
    }
    if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw DomainError("mask_ratio must be in [0, 1)");
    if (eval_every < 0) throw DomainError("eval_every must be >= 0");
    if (ap_n == 0) throw DomainError("ap_n must be >= 1");
    if (run_id.empty() || run_id.find_first_of("/\\,\"") != std::string::npos) throw DomainError("bad run_id");
    schedule(1).validate();
}

ScheduleConfig RunConfig::schedule(std::size_t steps_per_epoch) const {
    return ScheduleConfig{peak_lr, warmup_epochs, epochs, static_cast<int>(steps_per_epoch)};
}

RunConfig desk_preset() { return RunConfig{}; }

RunConfig full_scale_preset() {
    RunConfig c;
    c.identities_per_batch = 45;
    c.peak_lr = 4e-5;
    c.epochs = 20;
    c.warmup_epochs = 2;
    return c;
}

RunConfig preset(const std::string& name) {
    if (name == "desk") return desk_preset();
    if (name == "full-scale") return full_scale_preset();
    throw DomainError("unknown preset '" + name + "' (desk, full-scale)");
}

namespace {

namespace pt = boost::property_tree;

// One table drives both parsing and writing so the two cannot drift.
struct Field {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
    std::istringstream in(text);
    T v{};
    in >> v;
    if (!in || !(in >> std::ws).eof()) throw FormatError("config: bad value '" + text + "' for " + key);
    return v;
}

template <>
bool parse_value<bool>(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw FormatError("config: bad boolean '" + text + "' for " + key);
}

template <typename T>
std::string format_value(const T& v) {
    if constexpr (std::is_same_v<T, bool>) {
        return v ? "true" : "false";
    } else if constexpr (std::is_same_v<T, std::string>) {
        return v;
    } else {
        std::ostringstream out;
        out.precision(17);
        out << v;
        return out.str();
    }
}

template <typename T>
Field field(T RunConfig::*m) {
    return {[m](RunConfig& c, const std::string& s) {
                if constexpr (std::is_same_v<T, std::string>) c.*m = s;
                else c.*m = parse_value<T>("", s);
            },
            [m](const RunConfig& c) { return format_value(c.*m); }};
}

template <typename S, typename T>
Field field(S RunConfig::*outer, T S::*m) {
    return {[outer, m](RunConfig& c, const std::string& s) { (c.*outer).*m = parse_value<T>("", s); },
            [outer, m](const RunConfig& c) { return format_value((c.*outer).*m); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table = [] {
        std::vector<std::pair<std::string, Field>> t;
        t.emplace_back("run.seed", field(&RunConfig::seed));
        t.emplace_back("run.run_id", field(&RunConfig::run_id));
        t.emplace_back("run.output_dir", field(&RunConfig::output_dir));
        t.emplace_back("run.epochs", field(&RunConfig::epochs));
        t.emplace_back("run.warmup_epochs", field(&RunConfig::warmup_epochs));
        t.emplace_back("run.peak_lr", field(&RunConfig::peak_lr));
        t.emplace_back("run.identities_per_batch", field(&RunConfig::identities_per_batch));
        t.emplace_back("run.pairs_per_identity", field(&RunConfig::pairs_per_identity));
        t.emplace_back("run.mask_ratio", field(&RunConfig::mask_ratio));
        t.emplace_back("run.eval_every", field(&RunConfig::eval_every));
        t.emplace_back("run.ap_n", field(&RunConfig::ap_n));
        t.emplace_back("run.adam_beta1", field(&RunConfig::adam, &AdamConfig::beta1));
        t.emplace_back("run.adam_beta2", field(&RunConfig::adam, &AdamConfig::beta2));
        t.emplace_back("run.adam_eps", field(&RunConfig::adam, &AdamConfig::eps));
        t.emplace_back("corpus.seed", field(&RunConfig::corpus, &CorpusConfig::seed));
        t.emplace_back("corpus.train_identities", field(&RunConfig::corpus, &CorpusConfig::train_identities));
        t.emplace_back("corpus.test_identities", field(&RunConfig::corpus, &CorpusConfig::test_identities));
        t.emplace_back("corpus.pairs_per_identity", field(&RunConfig::corpus, &CorpusConfig::pairs_per_identity));
        t.emplace_back("corpus.slots", field(&RunConfig::corpus, &CorpusConfig::slots));
        t.emplace_back("corpus.values_per_slot", field(&RunConfig::corpus, &CorpusConfig::values_per_slot));
        t.emplace_back("corpus.image_noise", field(&RunConfig::corpus, &CorpusConfig::image_noise));
        t.emplace_back("corpus.background_dims", field(&RunConfig::corpus, &CorpusConfig::background_dims));
        t.emplace_back("corpus.p_drop", field(&RunConfig::corpus, &CorpusConfig::p_drop));
        t.emplace_back("corpus.p_swap", field(&RunConfig::corpus, &CorpusConfig::p_swap));
        t.emplace_back("encoder.d", field(&RunConfig::encoder, &EncoderConfig::d));
        t.emplace_back("encoder.vocab_size", field(&RunConfig::encoder, &EncoderConfig::vocab_size));
        t.emplace_back("encoder.max_seq_len", field(&RunConfig::encoder, &EncoderConfig::max_seq_len));
        t.emplace_back("encoder.n_blocks", field(&RunConfig::encoder, &EncoderConfig::n_blocks));
        t.emplace_back("encoder.n_heads", field(&RunConfig::encoder, &EncoderConfig::n_heads));
        t.emplace_back("encoder.image_input_dim", field(&RunConfig::encoder, &EncoderConfig::image_input_dim));
        t.emplace_back("loss.tau_pos", field(&RunConfig::loss, &LossConfig::tau_pos));
        t.emplace_back("loss.tau_neg", field(&RunConfig::loss, &LossConfig::tau_neg));
        t.emplace_back("loss.alpha", field(&RunConfig::loss, &LossConfig::alpha));
        t.emplace_back("loss.beta", field(&RunConfig::loss, &LossConfig::beta));
        t.emplace_back("loss.lambda_fuse", field(&RunConfig::loss, &LossConfig::lambda_fuse));
        t.emplace_back("loss.lambda_rec", field(&RunConfig::loss, &LossConfig::lambda_rec));
        t.emplace_back("loss.lambda_guide", field(&RunConfig::loss, &LossConfig::lambda_guide));
        t.emplace_back("loss.refine_weight", field(&RunConfig::loss, &LossConfig::refine_weight));
        t.emplace_back("loss.negatives",
                       Field{[](RunConfig& c, const std::string& s) {
                                 if (s == "batch") c.loss.negatives = NegativeScope::Batch;
                                 else if (s == "bank") c.loss.negatives = NegativeScope::Bank;
                                 else throw FormatError("config: loss.negatives must be batch or bank");
                             },
                             [](const RunConfig& c) {
                                 return std::string(c.loss.negatives == NegativeScope::Batch ? "batch" : "bank");
                             }});
        t.emplace_back("flags.gf", field(&RunConfig::flags, &AblationFlags::global_fusion));
        t.emplace_back("flags.lr", field(&RunConfig::flags, &AblationFlags::local_rec));
        t.emplace_back("flags.rgrl", field(&RunConfig::flags, &AblationFlags::guided));
        t.emplace_back("flags.refine", field(&RunConfig::flags, &AblationFlags::refine));
        return t;
    }();
    return table;
}

}  // namespace

RunConfig parse_config(std::istream& in, const RunConfig& base) {
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    std::map<std::string, const Field*> by_key;
    for (const auto& [key, f] : fields()) by_key.emplace(key, &f);

    RunConfig cfg = base;
    bool versioned = false;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) {
            if (section != "format_version") throw FormatError("config: top-level key '" + section + "' outside a section");
            const int v = parse_value<int>(section, body.data());
            if (v != kConfigFormatVersion) throw FormatError("config: unsupported format_version " + body.data());
            versioned = true;
            continue;
        }
        for (const auto& [key, value] : body) {
            const std::string full = section + "." + key;
            auto it = by_key.find(full);
            if (it == by_key.end()) throw FormatError("config: unknown key '" + full + "'");
            try {
                it->second->set(cfg, value.data());
            } catch (const FormatError&) {
                throw FormatError("config: bad value '" + value.data() + "' for " + full);
            }
        }
    }
    if (!versioned) throw FormatError("config: missing format_version");
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::string& path, const RunConfig& base) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path);
    return parse_config(in, base);
}

void write_config(std::ostream& out, const RunConfig& cfg) {
    out << "format_version = " << kConfigFormatVersion << "\n";
    std::string current;
    for (const auto& [key, f] : fields()) {
        const auto dot = key.find('.');
        const std::string section = key.substr(0, dot);
        if (section != current) {
            out << "\n[" << section << "]\n";
            current = section;
        }
        out << key.substr(dot + 1) << " = " << f.get(cfg) << "\n";
    }
}

}  // namespace mmref

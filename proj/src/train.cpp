#include "mspa/train.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "json.hpp"
#include "mspa/config.hpp"
#include "mspa/proto.hpp"
#include "mspa/pseudo.hpp"
#include "mspa/report.hpp"

namespace mspa {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
    const auto fail = [](const std::string& key, const std::string& why) {
        throw std::invalid_argument("config key '" + key + "': " + why);
    };
    if (n_prototypes < 1) fail("n_prototypes", "must be >= 1");
    if (labeled_batch != n_prototypes) fail("labeled_batch", "must equal n_prototypes (one prototype pair per labeled image)");
    if (unlabeled_batch < 1) fail("unlabeled_batch", "must be >= 1");
    if (!(lr > 0.0f)) fail("lr", "must be positive");
    if (!(adam_beta1 >= 0.0f && adam_beta1 < 1.0f)) fail("adam_beta1", "must be in [0, 1)");
    if (!(adam_beta2 >= 0.0f && adam_beta2 < 1.0f)) fail("adam_beta2", "must be in [0, 1)");
    if (!(adam_eps > 0.0f)) fail("adam_eps", "must be positive");
    if (!(w_max > 0.0f)) fail("w_max", "must be positive");
    if (t_max < 1 || t_max > (1L << 24)) fail("t_max", "must be in [1, 2^24]");
    if (checkpoint_every < 0) fail("checkpoint_every", "must be >= 0");
    if (val_every < 0) fail("val_every", "must be >= 0");
    if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) fail("labeled_fraction", "must be in (0, 1]");
    if (!(grad_clip >= 0.0f)) fail("grad_clip", "must be >= 0");
    try {
        descriptor.validate();
    } catch (const std::invalid_argument& e) {
        fail("widths/feature_dim", e.what());
    }
}

// ---- optimizer -----------------------------------------------------------

void adam_update(std::vector<NamedTensor>& params, AdamState& state, const AdamOptions& opt) {
    if (state.m.size() != params.size()) {
        state.m.clear();
        state.v.clear();
        for (const auto& p : params) {
            state.m.emplace_back(p.value.numel(), 0.0f);
            state.v.emplace_back(p.value.numel(), 0.0f);
        }
    }
    ++state.step;
    const float bc1 = static_cast<float>(1.0 - std::pow(static_cast<double>(opt.beta1), static_cast<double>(state.step)));
    const float bc2 = static_cast<float>(1.0 - std::pow(static_cast<double>(opt.beta2), static_cast<double>(state.step)));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& t = params[k].value;
        auto w = t.mutable_data();
        auto g = t.grad();
        auto& m = state.m[k];
        auto& v = state.v[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const float gi = g.empty() ? 0.0f : g[i];
            m[i] = opt.beta1 * m[i] + (1.0f - opt.beta1) * gi;
            v[i] = opt.beta2 * v[i] + (1.0f - opt.beta2) * gi * gi;
            const float m_hat = m[i] / bc1;
            const float v_hat = v[i] / bc2;
            w[i] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps);
        }
    }
}

double clip_grad_norm(std::vector<NamedTensor>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params)
        for (float g : p.value.grad()) sq += double(g) * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const float factor = static_cast<float>(max_norm / norm);
        for (auto& p : params)
            for (auto& g : p.value.mutable_grad()) g *= factor;
    }
    return norm;
}

// ---- checkpoint ----------------------------------------------------------

namespace {

// u64 values travel as four exact 16-bit chunks in f32 slots.
void push_u64(std::vector<float>& out, std::uint64_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<float>((v >> (16 * k)) & 0xffffu));
}

std::uint64_t pop_u64(std::span<const float> in, std::size_t at) {
    std::uint64_t v = 0;
    for (int k = 0; k < 4; ++k) {
        const float f = in[at + k];
        if (!(f >= 0.0f && f <= 65535.0f) || f != std::floor(f)) throw CheckpointError("bad checkpoint: corrupt integer record");
        v |= static_cast<std::uint64_t>(f) << (16 * k);
    }
    return v;
}

struct Record {
    std::string name;
    Shape dims;
    std::vector<float> payload;
};

void put_u32(std::string& out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xffu));
}

void put_record(std::string& out, const std::string& name, const Shape& dims, std::span<const float> payload) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(dims.size()));
    for (int d : dims) put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : payload) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, sizeof bits);
        put_u32(out, bits);
    }
}

class Reader {
public:
    explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}
    bool done() const { return pos_ == bytes_.size(); }
    std::uint32_t u32(const char* what) {
        if (bytes_.size() - pos_ < 4) throw CheckpointError(std::string("bad checkpoint: truncated ") + what);
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + k])) << (8 * k);
        pos_ += 4;
        return v;
    }
    std::string str(std::size_t n) {
        if (bytes_.size() - pos_ < n) throw CheckpointError("bad checkpoint: truncated record name");
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::string bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
    std::string out = "MSPA";
    put_u32(out, kCheckpointVersion);
    const auto scalar = [&](const std::string& name, float v) { put_record(out, name, {}, std::span<const float>(&v, 1)); };
    const auto words = [&](const std::string& name, const std::vector<std::uint64_t>& ws) {
        std::vector<float> payload;
        for (auto w : ws) push_u64(payload, w);
        put_record(out, name, {static_cast<int>(payload.size())}, payload);
    };
    scalar("iteration", static_cast<float>(ckpt.iteration));
    words("config_hash", {ckpt.config_hash});
    words("rng", ckpt.rng_state);
    {
        std::vector<float> w(ckpt.params.descriptor.widths.begin(), ckpt.params.descriptor.widths.end());
        put_record(out, "arch.widths", {static_cast<int>(w.size())}, w);
    }
    scalar("arch.feature_dim", static_cast<float>(ckpt.params.descriptor.feature_dim));
    scalar("adam.step", static_cast<float>(ckpt.adam.step));
    for (std::size_t k = 0; k < ckpt.params.tensors.size(); ++k) {
        const auto& p = ckpt.params.tensors[k];
        put_record(out, "param." + p.name, p.value.shape(), p.value.data());
        const std::vector<float> zeros(p.value.numel(), 0.0f);
        const bool has_moments = k < ckpt.adam.m.size();
        put_record(out, "adam.m." + p.name, p.value.shape(), has_moments ? std::span<const float>(ckpt.adam.m[k]) : zeros);
        put_record(out, "adam.v." + p.name, p.value.shape(), has_moments ? std::span<const float>(ckpt.adam.v[k]) : zeros);
    }
    const fs::path tmp = fs::path(path.string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error(tmp.string() + ": cannot open for writing");
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw std::runtime_error(tmp.string() + ": write failed");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw std::runtime_error(path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("bad checkpoint: cannot open " + path.string());
    Reader r(std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>()));
    std::string magic;
    try {
        magic = r.str(4);
    } catch (const CheckpointError&) {
        throw CheckpointError("bad checkpoint: " + path.string() + " is too short");
    }
    if (magic != "MSPA") throw CheckpointError("bad checkpoint: " + path.string() + " has wrong magic");
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion) {
        throw CheckpointError("bad checkpoint: unsupported format version " + std::to_string(version));
    }
    std::map<std::string, Record> records;
    while (!r.done()) {
        Record rec;
        const std::uint32_t name_len = r.u32("record header");
        if (name_len == 0 || name_len > 4096) throw CheckpointError("bad checkpoint: corrupt record name length");
        rec.name = r.str(name_len);
        const std::uint32_t rank = r.u32("record rank");
        if (rank > 4) throw CheckpointError("bad checkpoint: record '" + rec.name + "' has rank " + std::to_string(rank));
        std::size_t count = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const std::uint32_t d = r.u32("record dims");
            if (d > (1u << 28)) throw CheckpointError("bad checkpoint: record '" + rec.name + "' has absurd extent");
            rec.dims.push_back(static_cast<int>(d));
            count *= d;
        }
        if (count > (1u << 28)) throw CheckpointError("bad checkpoint: record '" + rec.name + "' too large");
        rec.payload.resize(count);
        for (auto& v : rec.payload) {
            const std::uint32_t bits = r.u32("record payload");
            std::memcpy(&v, &bits, sizeof v);
        }
        const std::string name = rec.name;
        records[name] = std::move(rec);
    }
    const auto need = [&](const std::string& name) -> const Record& {
        const auto it = records.find(name);
        if (it == records.end()) throw CheckpointError("bad checkpoint: missing record '" + name + "'");
        return it->second;
    };
    const auto scalar = [&](const std::string& name) {
        const Record& rec = need(name);
        if (rec.payload.size() != 1) throw CheckpointError("bad checkpoint: record '" + name + "' is not a scalar");
        return rec.payload[0];
    };

    Checkpoint ck;
    ck.iteration = static_cast<long>(scalar("iteration"));
    {
        const Record& h = need("config_hash");
        if (h.payload.size() != 4) throw CheckpointError("bad checkpoint: config_hash size");
        ck.config_hash = pop_u64(h.payload, 0);
    }
    {
        const Record& rng = need("rng");
        if (rng.payload.size() % 4 != 0) throw CheckpointError("bad checkpoint: rng size");
        for (std::size_t i = 0; i < rng.payload.size(); i += 4) ck.rng_state.push_back(pop_u64(rng.payload, i));
    }
    NetDescriptor desc;
    desc.widths.clear();
    for (float w : need("arch.widths").payload) desc.widths.push_back(static_cast<int>(w));
    desc.feature_dim = static_cast<int>(scalar("arch.feature_dim"));
    try {
        desc.validate();
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(std::string("bad checkpoint: ") + e.what());
    }
    ck.params.descriptor = desc;
    ck.adam.step = static_cast<long>(scalar("adam.step"));
    for (const auto& [name, shape] : param_layout(desc)) {
        const Record& p = need("param." + name);
        const Record& m = need("adam.m." + name);
        const Record& v = need("adam.v." + name);
        if (p.dims != shape || m.dims != shape || v.dims != shape) {
            throw CheckpointError("bad checkpoint: '" + name + "' has shape " + shape_str(p.dims) + ", expected " + shape_str(shape));
        }
        ck.params.tensors.push_back({name, Tensor::from(shape, p.payload, true)});
        ck.adam.m.push_back(m.payload);
        ck.adam.v.push_back(v.payload);
    }
    return ck;
}

// ---- step ----------------------------------------------------------------

namespace {

Tensor batch_mean(const std::vector<Tensor>& terms) {
    Tensor acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return terms.size() == 1 ? acc : scale(acc, 1.0f / static_cast<float>(terms.size()));
}

std::optional<Tensor> optional_mean(const std::vector<Tensor>& terms) {
    if (terms.empty()) return std::nullopt;
    return batch_mean(terms);
}

json loss_value(const std::optional<Tensor>& t) { return t ? json(t->item()) : json(nullptr); }

}  // namespace

StepResult compute_losses(const SegNetParams& params, const std::vector<LabeledSample>& labeled,
                          const std::vector<UnlabeledSample>& unlabeled, long t, const TrainConfig& config) {
    if (labeled.empty()) throw std::invalid_argument("train_step: empty labeled batch");
    StepResult result;

    std::vector<NetOutput> lab;
    std::vector<Tensor> ce_terms;
    for (const auto& s : labeled) {
        lab.push_back(forward(params, s.image));
        ce_terms.push_back(cross_entropy(lab.back().probs, s.mask));
    }
    Tensor l_s = batch_mean(ce_terms);

    std::vector<Tensor> lpa_terms, upa_terms, spa_terms;
    if (config.toggles.any() && !unlabeled.empty()) {
        std::vector<PrototypePair> labeled_pairs;
        for (std::size_t i = 0; i < labeled.size(); ++i) {
            labeled_pairs.push_back(
                extract_prototypes_with_fallback(lab[i].feature, plain_vote(lab[i].probs), labeled[i].mask, labeled[i].id));
        }
        std::vector<PrototypePair> unlabeled_pairs;
        result.stats.usable_pairs_min = static_cast<int>(labeled_pairs.size());
        for (const auto& s : unlabeled) {
            const NetOutput out = forward(params, s.image);
            const SimilarityStack sims = similarity_stack(out.feature, labeled_pairs);
            std::vector<BinaryMask> votes;
            for (const auto& g : sims)
                if (g.usable) votes.push_back(prototype_vote(g.g[0], g.g[1]));
            const int usable = static_cast<int>(votes.size());
            result.stats.usable_pairs_min = std::min(result.stats.usable_pairs_min, usable);
            if (config.toggles.lpa && usable > 0) lpa_terms.push_back(lpa_loss(out.probs, aggregate_probability(sims)));

            votes.push_back(plain_vote(out.probs));
            const VoteState state = fuse_votes(std::move(votes));
            unlabeled_pairs.push_back(extract_prototypes(out.feature, state.pseudo_label, s.id));

            if (config.toggles.spa && state.n_valid == 4) {
                std::array<std::optional<RegionalPrototype>, 4> regions;
                for (int k = 1; k <= 4; ++k)
                    regions[k - 1] = regional_prototype(out.feature, out.probs, state.vote_sum, k, region_weight_class(k));
                if (auto l = spa_loss(regions)) {
                    spa_terms.push_back(*l);
                    ++result.stats.spa_images;
                }
            }
        }
        if (config.toggles.upa) {
            const AveragedPrototype avg = average_prototypes(unlabeled_pairs);
            if (avg.complete()) {
                for (std::size_t i = 0; i < labeled.size(); ++i)
                    upa_terms.push_back(upa_loss(pair_probability(lab[i].feature, avg.p), labeled[i].mask));
            }
        }
    }
    result.losses = total_loss(std::move(l_s), optional_mean(lpa_terms), optional_mean(upa_terms), optional_mean(spa_terms),
                               config.toggles, ramp_weight(config.ramp(), t));
    return result;
}

StepResult train_step(SegNetParams& params, AdamState& adam, const std::vector<LabeledSample>& labeled,
                      const std::vector<UnlabeledSample>& unlabeled, long t, const TrainConfig& config) {
    autograd::clear();
    params.zero_grad();
    StepResult r = compute_losses(params, labeled, unlabeled, t, config);
    const float total = r.losses.total.item();
    if (!std::isfinite(total)) {
        autograd::clear();
        json diag{{"t", t},
                  {"l_s", r.losses.l_s.item()},
                  {"l_lpa", loss_value(r.losses.l_lpa)},
                  {"l_upa", loss_value(r.losses.l_upa)},
                  {"l_spa", loss_value(r.losses.l_spa)},
                  {"lambda", r.losses.lambda_t},
                  {"total", std::isnan(total) ? "nan" : "inf"}};
        std::vector<std::string> ids;
        for (const auto& s : labeled) ids.push_back(s.id);
        for (const auto& s : unlabeled) ids.push_back(s.id);
        diag["batch_ids"] = ids;
        throw NonFiniteLossError("non-finite total loss at iteration " + std::to_string(t), diag.dump(2));
    }
    autograd::backward(r.losses.total);
    if (config.grad_clip > 0.0f) clip_grad_norm(params.tensors, config.grad_clip);
    adam_update(params.tensors, adam, AdamOptions{config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps});
    return r;
}

// ---- run -----------------------------------------------------------------

std::uint64_t config_hash(const TrainConfig& config) { return fnv1a64(to_json(config).dump()); }

namespace {

std::vector<Sample> load_optional(const fs::path& dir) {
    if (!fs::is_directory(dir / "images")) return {};
    return load_pair_dir(dir);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error(path.string() + ": cannot open for writing");
    f << text;
    if (!f) throw std::runtime_error(path.string() + ": write failed");
}

}  // namespace

RunResult run(const TrainConfig& config, const fs::path& data_dir, const fs::path& out_dir, const RunOptions& options) {
    config.validate();
    const fs::path train_dir = data_dir / "train";
    if (!fs::is_directory(train_dir)) throw DataError(train_dir.string() + ": training split not found");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error(out_dir.string() + ": " + ec.message());

    SplitResult data = split(load_pair_dir(train_dir), SplitSpec{config.labeled_fraction, config.seed});
    std::vector<LabeledSample> val;
    for (const auto& s : load_optional(data_dir / "val"))
        if (s.mask) val.push_back(as_labeled(s));
    const std::vector<Sample> test = load_optional(data_dir / "test");

    RunResult result;
    result.n_labeled = data.labeled.size();
    result.n_unlabeled = data.unlabeled.size();

    SegNetParams params = init_params(config.descriptor, derive_seed(config.seed, "init"));
    AdamState adam;
    Rng rng(derive_seed(config.seed, "train"));
    long start = 0;
    const std::uint64_t hash = config_hash(config);
    if (options.resume_from) {
        Checkpoint ck = load_checkpoint(*options.resume_from);
        if (ck.config_hash != hash) throw CheckpointError("checkpoint was written under a different configuration");
        if (!(ck.params.descriptor == config.descriptor)) throw CheckpointError("checkpoint architecture differs from config");
        params = std::move(ck.params);
        adam = std::move(ck.adam);
        rng = rng_from_state_words(ck.rng_state);
        start = ck.iteration;
    }
    const auto snapshot = [&](long iteration) {
        return Checkpoint{params, adam, iteration, hash, rng_state_words(rng)};
    };

    std::ofstream log(out_dir / "log.jsonl", options.resume_from ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error((out_dir / "log.jsonl").string() + ": cannot open for writing");

    const bool use_unlabeled = config.toggles.any() && !data.unlabeled.empty();
    std::uniform_int_distribution<std::size_t> pick_l(0, data.labeled.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_u(0, data.unlabeled.empty() ? 0 : data.unlabeled.size() - 1);
    for (long t = start; t < config.t_max; ++t) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<LabeledSample> lb;
        std::vector<UnlabeledSample> ub;
        for (int i = 0; i < config.labeled_batch; ++i) {
            const auto& s = data.labeled[pick_l(rng)];
            lb.push_back(config.augment ? augment(s, rng) : s);
        }
        if (use_unlabeled) {
            for (int i = 0; i < config.unlabeled_batch; ++i) {
                const auto& s = data.unlabeled[pick_u(rng)];
                ub.push_back(config.augment ? augment(s, rng) : s);
            }
        }
        StepResult step;
        try {
            step = train_step(params, adam, lb, ub, t, config);
        } catch (const NonFiniteLossError& e) {
            write_text(out_dir / "nan_dump.json", e.diagnostic + "\n");
            throw;
        }
        nlohmann::ordered_json rec{{"t", t},
                 {"l_s", step.losses.l_s.item()},
                 {"l_lpa", loss_value(step.losses.l_lpa)},
                 {"l_upa", loss_value(step.losses.l_upa)},
                 {"l_spa", loss_value(step.losses.l_spa)},
                 {"lambda", step.losses.lambda_t},
                 {"total", step.losses.total.item()},
                 {"n_l", result.n_labeled},
                 {"n_u", result.n_unlabeled}};
        if (config.val_every > 0 && !val.empty() && ((t + 1) % config.val_every == 0 || t + 1 == config.t_max)) {
            const double dsc = evaluate(params, val).mean.dsc;
            rec["val_dsc"] = dsc;
            result.last_val_dsc = dsc;
        }
        rec["wall_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        const std::string line = rec.dump();
        log << line << '\n';
        log.flush();
        if (options.on_record) options.on_record(line);
        ++result.steps_run;
        if (config.checkpoint_every > 0 && (t + 1) % config.checkpoint_every == 0) {
            save_checkpoint(out_dir / ("ckpt_" + std::to_string(t + 1) + ".ckpt"), snapshot(t + 1));
        }
    }
    autograd::clear();
    result.final_checkpoint = out_dir / "final.ckpt";
    save_checkpoint(result.final_checkpoint, snapshot(config.t_max));

    json metrics{{"n_labeled", result.n_labeled},
                 {"n_unlabeled", result.n_unlabeled},
                 {"t_max", config.t_max},
                 {"seed", config.seed},
                 {"toggles", {{"lpa", config.toggles.lpa}, {"upa", config.toggles.upa}, {"spa", config.toggles.spa}}}};
    if (result.last_val_dsc) metrics["val_dsc"] = *result.last_val_dsc;
    if (!test.empty()) {
        result.test_metrics = evaluate(params, test);
        metrics["test"] = metrics_json(*result.test_metrics);
    }
    write_text(out_dir / "metrics.json", metrics.dump(2) + "\n");
    return result;
}

}  // namespace mspa

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mspa/data.hpp"
#include "mspa/eval.hpp"
#include "mspa/losses.hpp"
#include "mspa/net.hpp"
#include "mspa/random.hpp"

namespace mspa {

struct TrainConfig {
    int n_prototypes = 4;
    int labeled_batch = 4;  // must equal n_prototypes: one prototype pair per labeled image
    int unlabeled_batch = 4;
    float lr = 1e-4f;
    float adam_beta1 = 0.9f;
    float adam_beta2 = 0.999f;
    float adam_eps = 1e-8f;
    float w_max = 0.1f;
    long t_max = 2000;
    std::uint64_t seed = 0;
    LossToggles toggles;
    long checkpoint_every = 0;  // 0: final checkpoint only
    long val_every = 200;       // 0: no validation
    double labeled_fraction = 0.2;
    float grad_clip = 5.0f;     // global L2 norm; 0 disables
    bool augment = true;
    NetDescriptor descriptor;

    void validate() const;
    RampSchedule ramp() const { return {w_max, t_max}; }
};

// ---- optimizer -----------------------------------------------------------

struct AdamOptions {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

struct AdamState {
    long step = 0;
    std::vector<std::vector<float>> m, v;
};

// Bias-corrected Adam over the tensors' accumulated grads (missing grad = 0).
void adam_update(std::vector<NamedTensor>& params, AdamState& state, const AdamOptions& opt);

// Scales all grads so their global L2 norm is at most max_norm; returns the
// norm before clipping.
double clip_grad_norm(std::vector<NamedTensor>& params, double max_norm);

// ---- checkpoint ----------------------------------------------------------

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    SegNetParams params;
    AdamState adam;
    long iteration = 0;  // completed steps
    std::uint64_t config_hash = 0;
    std::vector<std::uint64_t> rng_state;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- step ----------------------------------------------------------------

class NonFiniteLossError : public std::runtime_error {
public:
    NonFiniteLossError(const std::string& what, std::string diagnostic)
        : std::runtime_error(what), diagnostic(std::move(diagnostic)) {}
    std::string diagnostic;  // JSON
};

struct StepStats {
    int usable_pairs_min = 0;  // fewest labeled prototype pairs usable for an unlabeled image
    int spa_images = 0;        // unlabeled images contributing a self-alignment term
};

struct StepResult {
    LossBundle losses;
    StepStats stats;
};

// Forward, loss assembly, backward and one Adam update.
StepResult train_step(SegNetParams& params, AdamState& adam, const std::vector<LabeledSample>& labeled,
                      const std::vector<UnlabeledSample>& unlabeled, long t, const TrainConfig& config);

// Loss assembly only: tensors stay attached to the tape so callers can differentiate.
StepResult compute_losses(const SegNetParams& params, const std::vector<LabeledSample>& labeled,
                          const std::vector<UnlabeledSample>& unlabeled, long t, const TrainConfig& config);

// ---- run -----------------------------------------------------------------

struct RunOptions {
    std::optional<std::filesystem::path> resume_from;
    bool verbose = false;
    // Called after every step with the log record (JSON text).
    std::function<void(const std::string&)> on_record;
};

struct RunResult {
    std::filesystem::path final_checkpoint;
    long steps_run = 0;
    std::size_t n_labeled = 0;
    std::size_t n_unlabeled = 0;
    std::optional<MetricsRecord> test_metrics;
    std::optional<double> last_val_dsc;
};

std::uint64_t config_hash(const TrainConfig& config);

// Trains on data_dir/train (validating on data_dir/val, testing on
// data_dir/test when present) and writes final.ckpt, log.jsonl and
// metrics.json under out_dir.
RunResult run(const TrainConfig& config, const std::filesystem::path& data_dir, const std::filesystem::path& out_dir,
              const RunOptions& options = {});

}  // namespace mspa

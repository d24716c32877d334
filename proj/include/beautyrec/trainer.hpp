#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"

#include "beautyrec/adversary.hpp"
#include "beautyrec/generator.hpp"
#include "beautyrec/objectives.hpp"

namespace beautyrec {

struct TrainConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int64_t batch_size = 1;
    /// 0 means `epochs` passes over the makeup pool.
    int64_t total_steps = 0;
    int64_t epochs = 50;
    int64_t checkpoint_every = 1000;
    int64_t image_size = 256;
    std::uint64_t seed = 0;
    /// When positive, training cycles through the first N sampled pairs instead of drawing fresh ones.
    int64_t fixed_pairs = 0;
    int64_t discriminator_channels = 64;
    LossWeights weights;
    std::string checkpoint_dir = "checkpoints";
    std::string log_path;  // empty: log to stdout only
    int64_t prefetch = 2;

    /// Appends every violated constraint to `problems`.
    void validate(std::vector<std::string>& problems) const;
    nlohmann::json to_json() const;
};

/// Seed for the pair drawn at a given step. Sampling holds no state, so a resumed run draws
/// exactly what the uninterrupted run would have.
std::uint64_t step_seed(std::uint64_t seed, int64_t step);

/// A training pair and its makeup-loss targets, ready for a step.
struct PreparedPair {
    int64_t step = 0;
    PairSample pair;
    torch::Tensor targets;
};

/// Where training pairs come from.
class PairProvider {
public:
    virtual ~PairProvider() = default;
    virtual PairSample pair_for_step(int64_t step) const = 0;
    /// Number of makeup images, used to turn epochs into steps.
    virtual std::size_t makeup_pool_size() const = 0;
};

class DatasetPairs final : public PairProvider {
public:
    DatasetPairs(std::shared_ptr<const FaceDataset> dataset, std::uint64_t seed, int64_t fixed_pairs = 0);
    PairSample pair_for_step(int64_t step) const override;
    std::size_t makeup_pool_size() const override { return dataset_->ids(FaceDataset::Domain::Makeup).size(); }

private:
    std::shared_ptr<const FaceDataset> dataset_;
    std::uint64_t seed_;
    int64_t fixed_pairs_;
};

/// In-memory pairs, cycled in order. For tests and tiny experiments.
class ListPairs final : public PairProvider {
public:
    explicit ListPairs(std::vector<PairSample> pairs);
    PairSample pair_for_step(int64_t step) const override;
    std::size_t makeup_pool_size() const override { return pairs_.size(); }

private:
    std::vector<PairSample> pairs_;
};

/// Histogram-matched targets keyed by (source id, reference id). Thread-safe.
class TargetCache {
public:
    torch::Tensor get(const PairSample& pair);
    std::size_t size() const;

private:
    mutable std::mutex mutex_;
    std::map<std::pair<std::string, std::string>, torch::Tensor> cache_;
};

/// Background loader: prepares pairs for consecutive steps ahead of the trainer.
class PrefetchQueue {
public:
    PrefetchQueue(const PairProvider& provider, TargetCache& cache, int64_t first_step, std::size_t depth);
    ~PrefetchQueue();
    PrefetchQueue(const PrefetchQueue&) = delete;
    PrefetchQueue& operator=(const PrefetchQueue&) = delete;

    /// Blocks until the pair for the next step is ready. Rethrows loader errors.
    PreparedPair pop();

private:
    void run();

    const PairProvider& provider_;
    TargetCache& cache_;
    std::size_t depth_;
    int64_t next_step_;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<PreparedPair> ready_;
    std::exception_ptr error_;
    bool stop_ = false;
    std::thread worker_;
};

struct StepResult {
    LossReport report;
    bool accepted = true;  // false: non-finite loss, state rolled back
    double seconds = 0;
};

class Trainer {
public:
    Trainer(TrainConfig config, GeneratorConfig generator_config, std::shared_ptr<FeatureExtractor> extractor);

    /// One adversarial step on a prepared batch: discriminators first, then the generator.
    /// On a non-finite loss or gradient nothing changes and `accepted` is false.
    StepResult train_step(const TrainingBatch& batch);

    /// Runs steps [current_step(), until) with pairs from `provider`, logging one line per step
    /// and saving checkpoints every `checkpoint_every` steps and at the end.
    void run(const PairProvider& provider, int64_t until);
    int64_t planned_steps(const PairProvider& provider) const;

    void save(const std::filesystem::path& path) const;
    void resume(const std::filesystem::path& path);
    std::string checkpoint_bytes() const;

    int64_t current_step() const { return step_; }
    Generator& generator() { return generator_; }
    DiscriminatorSet& discriminators() { return discriminators_; }
    torch::optim::Adam& generator_optimizer() { return *g_opt_; }
    torch::optim::Adam& discriminator_optimizer() { return *d_opt_; }
    const TrainConfig& config() const { return config_; }

    /// Extra sinks for log lines (the log file and stdout are handled from the config).
    void set_log_stream(std::ostream* stream) { log_stream_ = stream; }
    /// Per-step callback, e.g. for collecting loss curves.
    void on_step(std::function<void(int64_t, const StepResult&)> callback) { on_step_ = std::move(callback); }

private:
    void log_line(const std::string& line);

    TrainConfig config_;
    std::shared_ptr<FeatureExtractor> extractor_;
    Generator generator_;
    DiscriminatorSet discriminators_;
    std::unique_ptr<torch::optim::Adam> g_opt_;
    std::unique_ptr<torch::optim::Adam> d_opt_;
    int64_t step_ = 0;
    std::ostream* log_stream_ = nullptr;
    std::function<void(int64_t, const StepResult&)> on_step_;
};

/// One log line, `key=value` pairs separated by spaces.
std::string format_log_line(int64_t step, const StepResult& result);

}  // namespace beautyrec

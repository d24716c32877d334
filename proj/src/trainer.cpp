#include "beautyrec/trainer.hpp"

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "beautyrec/checkpoint.hpp"
#include "beautyrec/errors.hpp"

namespace beautyrec {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

bool grads_finite(const std::vector<torch::Tensor>& params) {
    for (const auto& p : params) {
        if (p.grad().defined() && !torch::isfinite(p.grad()).all().item<bool>()) return false;
    }
    return true;
}

/// Deep copy of everything a step may touch: weights, spectral-norm buffers, Adam moments.
class Snapshot {
public:
    Snapshot(nn::Module& g, nn::Module& d, torch::optim::Adam& g_opt, torch::optim::Adam& d_opt) {
        torch::NoGradGuard no_grad;
        for (nn::Module* m : {&g, &d}) {
            for (auto& t : m->parameters()) tensors_.emplace_back(t, t.detach().clone());
            for (auto& t : m->buffers()) tensors_.emplace_back(t, t.detach().clone());
        }
        keep(g, g_opt);
        keep(d, d_opt);
    }

    void restore() {
        torch::NoGradGuard no_grad;
        for (auto& [live, copy] : tensors_) live.copy_(copy);
        for (auto& entry : optim_) {
            auto& state = entry.opt->state();
            state.erase(entry.key);
            if (entry.present) {
                auto s = std::make_unique<torch::optim::AdamParamState>();
                s->step(entry.step);
                s->exp_avg(entry.exp_avg);
                s->exp_avg_sq(entry.exp_avg_sq);
                state[entry.key] = std::move(s);
            }
        }
    }

private:
    struct OptimEntry {
        torch::optim::Adam* opt;
        void* key;
        bool present;
        int64_t step;
        torch::Tensor exp_avg, exp_avg_sq;
    };

    void keep(nn::Module& module, torch::optim::Adam& opt) {
        auto& state = opt.state();
        for (auto& p : module.parameters()) {
            void* key = p.unsafeGetTensorImpl();
            auto it = state.find(key);
            if (it == state.end()) {
                optim_.push_back({&opt, key, false, 0, {}, {}});
            } else {
                const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
                optim_.push_back({&opt, key, true, s.step(), s.exp_avg().clone(), s.exp_avg_sq().clone()});
            }
        }
    }

    std::vector<std::pair<torch::Tensor, torch::Tensor>> tensors_;
    std::vector<OptimEntry> optim_;
};

/// Discriminators act as a fixed function while the generator is updated.
class FrozenDiscriminators {
public:
    explicit FrozenDiscriminators(DiscriminatorSet& d) : d_(d) {
        d_->eval();
        for (auto& p : d_->parameters()) p.requires_grad_(false);
    }
    ~FrozenDiscriminators() {
        for (auto& p : d_->parameters()) p.requires_grad_(true);
        d_->train();
    }

private:
    DiscriminatorSet& d_;
};

}  // namespace

void TrainConfig::validate(std::vector<std::string>& problems) const {
    if (!(learning_rate > 0)) problems.push_back("train.learning_rate must be positive");
    if (!(beta1 >= 0 && beta1 < 1)) problems.push_back("train.beta1 must be in [0, 1)");
    if (!(beta2 >= 0 && beta2 < 1)) problems.push_back("train.beta2 must be in [0, 1)");
    if (batch_size != 1) problems.push_back("train.batch_size must be 1");
    if (total_steps < 0) problems.push_back("train.total_steps must be >= 0");
    if (epochs <= 0) problems.push_back("train.epochs must be positive");
    if (checkpoint_every < 0) problems.push_back("train.checkpoint_every must be >= 0");
    if (image_size <= 0 || image_size % 8 != 0) problems.push_back("train.image_size must be a positive multiple of 8");
    if (fixed_pairs < 0) problems.push_back("train.fixed_pairs must be >= 0");
    if (discriminator_channels <= 0) problems.push_back("train.discriminator_channels must be positive");
    if (weights.perceptual < 0) problems.push_back("train.lambda_per must be >= 0");
    if (weights.adversarial < 0) problems.push_back("train.lambda_ad must be >= 0");
    if (prefetch < 1) problems.push_back("train.prefetch must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"learning_rate", learning_rate},
            {"beta1", beta1},
            {"beta2", beta2},
            {"batch_size", batch_size},
            {"total_steps", total_steps},
            {"epochs", epochs},
            {"checkpoint_every", checkpoint_every},
            {"image_size", image_size},
            {"seed", seed},
            {"fixed_pairs", fixed_pairs},
            {"discriminator_channels", discriminator_channels},
            {"lambda_per", weights.perceptual},
            {"lambda_ad", weights.adversarial}};
}

std::uint64_t step_seed(std::uint64_t seed, int64_t step) {
    return splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(step));
}

DatasetPairs::DatasetPairs(std::shared_ptr<const FaceDataset> dataset, std::uint64_t seed, int64_t fixed_pairs)
    : dataset_(std::move(dataset)), seed_(seed), fixed_pairs_(fixed_pairs) {}

PairSample DatasetPairs::pair_for_step(int64_t step) const {
    const int64_t slot = fixed_pairs_ > 0 ? step % fixed_pairs_ : step;
    return dataset_->pair(step_seed(seed_, slot));
}

ListPairs::ListPairs(std::vector<PairSample> pairs) : pairs_(std::move(pairs)) {
    if (pairs_.empty()) throw std::invalid_argument("ListPairs needs at least one pair");
}

PairSample ListPairs::pair_for_step(int64_t step) const {
    return pairs_[static_cast<std::size_t>(step) % pairs_.size()];
}

torch::Tensor TargetCache::get(const PairSample& pair) {
    const auto key = std::make_pair(pair.source_id, pair.reference_id);
    {
        std::lock_guard lock(mutex_);
        if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    auto targets = makeup_targets(pair);
    std::lock_guard lock(mutex_);
    return cache_.emplace(key, targets).first->second;
}

std::size_t TargetCache::size() const {
    std::lock_guard lock(mutex_);
    return cache_.size();
}

PrefetchQueue::PrefetchQueue(const PairProvider& provider, TargetCache& cache, int64_t first_step, std::size_t depth)
    : provider_(provider), cache_(cache), depth_(std::max<std::size_t>(depth, 1)), next_step_(first_step) {
    worker_ = std::thread([this] { run(); });
}

PrefetchQueue::~PrefetchQueue() {
    {
        std::lock_guard lock(mutex_);
        stop_ = true;
    }
    cv_.notify_all();
    worker_.join();
}

void PrefetchQueue::run() {
    // Targets are plain data; no autograd on this thread.
    torch::NoGradGuard no_grad;
    while (true) {
        int64_t step;
        {
            std::unique_lock lock(mutex_);
            cv_.wait(lock, [&] { return stop_ || ready_.size() < depth_; });
            if (stop_) return;
            step = next_step_++;
        }
        PreparedPair prepared;
        try {
            prepared.step = step;
            prepared.pair = provider_.pair_for_step(step);
            prepared.targets = cache_.get(prepared.pair);
        } catch (...) {
            std::lock_guard lock(mutex_);
            error_ = std::current_exception();
            cv_.notify_all();
            return;
        }
        std::lock_guard lock(mutex_);
        ready_.push_back(std::move(prepared));
        cv_.notify_all();
    }
}

PreparedPair PrefetchQueue::pop() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return !ready_.empty() || error_; });
    if (ready_.empty()) std::rethrow_exception(error_);
    auto out = std::move(ready_.front());
    ready_.pop_front();
    cv_.notify_all();
    return out;
}

Trainer::Trainer(TrainConfig config, GeneratorConfig generator_config, std::shared_ptr<FeatureExtractor> extractor)
    : config_(std::move(config)), extractor_(std::move(extractor)) {
    std::vector<std::string> problems;
    config_.validate(problems);
    if (!problems.empty()) throw ConfigError(std::move(problems));
    if (!extractor_) throw ConfigError({"trainer needs a perceptual feature extractor"});
    torch::manual_seed(config_.seed);
    generator_ = Generator(std::move(generator_config));
    discriminators_ = DiscriminatorSet(config_.discriminator_channels);
    auto adam = [&] {
        return torch::optim::AdamOptions(config_.learning_rate).betas({config_.beta1, config_.beta2});
    };
    g_opt_ = std::make_unique<torch::optim::Adam>(generator_->parameters(), adam());
    d_opt_ = std::make_unique<torch::optim::Adam>(discriminators_->parameters(), adam());
    generator_->train();
    discriminators_->train();
}

StepResult Trainer::train_step(const TrainingBatch& batch) {
    const auto start = Clock::now();
    StepResult result;
    Snapshot snapshot(*generator_, *discriminators_, *g_opt_, *d_opt_);
    auto abort = [&] {
        g_opt_->zero_grad();
        d_opt_->zero_grad();
        snapshot.restore();
        result.accepted = false;
        result.seconds = std::chrono::duration<double>(Clock::now() - start).count();
        return result;
    };

    generator_->train();
    discriminators_->train();
    auto options = TransferOptions::from(generator_->config());
    auto outputs = generator_->forward(batch.sources, batch.references, batch.source_masks, batch.reference_masks, options);

    d_opt_->zero_grad();
    auto adv = discriminator_adversarial(discriminators_, batch.sources, batch.source_masks, outputs, batch.source_masks);
    result.report.adversarial_d = adv.d_loss.item<double>();
    if (!std::isfinite(result.report.adversarial_d)) return abort();
    adv.d_loss.backward();
    if (!grads_finite(discriminators_->parameters())) return abort();
    d_opt_->step();

    {
        FrozenDiscriminators frozen(discriminators_);
        g_opt_->zero_grad();
        auto g = generator_losses(generator_, discriminators_, *extractor_, batch, outputs, config_.weights);
        const double d_loss = result.report.adversarial_d;
        result.report = g.report;
        result.report.adversarial_d = d_loss;
        if (!result.report.finite()) return abort();
        g.total.backward();
        if (!grads_finite(generator_->parameters())) return abort();
        g_opt_->step();
    }
    result.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return result;
}

int64_t Trainer::planned_steps(const PairProvider& provider) const {
    if (config_.total_steps > 0) return config_.total_steps;
    return config_.epochs * static_cast<int64_t>(provider.makeup_pool_size());
}

void Trainer::log_line(const std::string& line) {
    std::cout << line << '\n' << std::flush;
    if (log_stream_) *log_stream_ << line << '\n' << std::flush;
    if (!config_.log_path.empty()) {
        std::ofstream out(config_.log_path, std::ios::app);
        out << line << '\n';
    }
}

void Trainer::run(const PairProvider& provider, int64_t until) {
    TargetCache cache;
    PrefetchQueue queue(provider, cache, step_, static_cast<std::size_t>(config_.prefetch));
    const fs::path dir = config_.checkpoint_dir;
    auto checkpoint = [&] {
        char name[32];
        std::snprintf(name, sizeof(name), "step_%08" PRId64 ".ckpt", step_);
        save(dir / name);
        save(dir / "latest.ckpt");
    };
    while (step_ < until) {
        auto prepared = queue.pop();
        auto batch = TrainingBatch::from(prepared.pair, prepared.targets);
        auto result = train_step(batch);
        log_line(format_log_line(step_, result));
        if (on_step_) on_step_(step_, result);
        ++step_;
        if (config_.checkpoint_every > 0 && step_ % config_.checkpoint_every == 0) checkpoint();
    }
    if (config_.checkpoint_every == 0 || step_ % config_.checkpoint_every != 0) checkpoint();
}

std::string Trainer::checkpoint_bytes() const {
    return serialize_checkpoint({generator_, discriminators_, g_opt_.get(), d_opt_.get(), step_, config_.to_json()});
}

void Trainer::save(const fs::path& path) const {
    save_checkpoint(path, {generator_, discriminators_, g_opt_.get(), d_opt_.get(), step_, config_.to_json()});
}

void Trainer::resume(const fs::path& path) {
    auto contents = read_checkpoint(path);
    restore_training(contents, generator_, discriminators_, *g_opt_, *d_opt_);
    step_ = contents.step;
}

std::string format_log_line(int64_t step, const StepResult& r) {
    char buf[320];
    if (!r.accepted) {
        std::snprintf(buf, sizeof(buf), "step=%" PRId64 " incident=non_finite_loss rolled_back=1 time=%.3f", step,
                      r.seconds);
        return buf;
    }
    const auto& l = r.report;
    std::snprintf(buf, sizeof(buf),
                  "step=%" PRId64
                  " content=%.6f makeup=%.6f perceptual=%.6f adv_g=%.6f adv_d=%.6f total_g=%.6f time=%.3f",
                  step, l.content, l.makeup, l.perceptual, l.adversarial_g, l.adversarial_d, l.total_g, r.seconds);
    return buf;
}

}  // namespace beautyrec

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "caries/data/dataset.hpp"
#include "caries/detector/model.hpp"
#include "caries/ldlr/loss.hpp"

namespace caries::detector {

struct TrainConfig {
    std::size_t epochs = 60;
    std::size_t batch = 8;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    std::size_t topk = 16;
    double lambda_init = 1.0;
    ldlr::SensitivityConfig eta{1.0, 1.0, 1.0};
    ldlr::FocalConfig focal{0.25, 2.0};
    std::uint64_t seed = 0;
    bool no_tsqi = false;
    bool no_ldlr = false;    // forces every sensitivity to 0
    bool freeze_spb = false;
    bool flip = true;        // random horizontal flip
    double sem_aux = 1.0;    // weight of the dense focal loss on the semantic head (0 disables)

    void validate() const;
    /// Sensitivities actually used by the loss.
    ldlr::SensitivityConfig effective_eta() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Raised when the loss or a gradient stops being finite.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Sample {
    ag::Tensor image;  // [3,S,S]
    std::vector<Object> objects;
};

Sample make_sample(const imgproc::RgbImage& img, const std::vector<Object>& objects, bool flip);

struct StepStats {
    std::size_t iter = 0;
    double total = 0, cls = 0, bbox = 0, giou = 0;
    double mean_w_cls = 0, mean_w_bbox = 0, mean_w_iou = 0;  // over matched pairs; 0 with no pairs
    double sem = 0;  // weighted semantic-head term, included in total
    std::size_t num_pos = 0;
};

/// Forward, match, loss, backward and one optimizer update over `batch`.
/// The batch loss is the sum of the per-image losses.
StepStats train_step(std::span<const Sample> batch, const Detector& model, ag::AdamW& opt, const TrainConfig& cfg,
                     std::size_t iter);

struct SampleLoss {
    ag::Tensor total;  // detection loss + sem_aux * semantic loss
    ldlr::LossBreakdown detection;
    double semantic = 0;  // unweighted
};

/// Dense focal loss of the semantic head: the cell holding an object's
/// center is positive for that object's class, every other cell/class negative.
ag::Tensor semantic_loss(const ag::Tensor& semantic_logits, std::span<const Object> objects,
                         const ldlr::FocalConfig& focal);

/// Loss of one sample; builds the graph but does not run backward.
SampleLoss sample_loss(const Sample& sample, const Detector& model, const TrainConfig& cfg);

void write_loss_header(std::ostream& os);
void write_loss_row(std::ostream& os, const StepStats& s);

struct TrainResult {
    std::vector<StepStats> steps;
};

/// Full training loop. Writes one CSV row per iteration to `loss_csv` when given.
TrainResult train(const data::Dataset& ds, Detector& model, const TrainConfig& cfg, std::ostream* loss_csv = nullptr,
                  const std::function<void(std::size_t epoch, double mean_loss)>& on_epoch = {});

/// Model config derived from a train config (K, lambda init, no_tsqi).
ModelConfig model_config_for(const TrainConfig& cfg, std::size_t num_classes, std::size_t image_size);

/// `path` gets the parameter container; `path` + ".json" the config sidecar.
void save_model(const std::filesystem::path& path, const Detector& model, const TrainConfig& cfg);
struct LoadedModel {
    Detector model;
    TrainConfig train;
};
LoadedModel load_model(const std::filesystem::path& path);

}  // namespace caries::detector

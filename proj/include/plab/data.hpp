#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plab/tensor.hpp"

namespace plab {

// Byte-image classification dataset with train/test split tags.
struct Dataset {
    int classes = 0;
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<std::uint8_t> pixels;  // count * channels*height*width, sample-major
    std::vector<std::uint16_t> labels;
    std::vector<std::uint8_t> splits;  // 0 = train, 1 = test

    std::int64_t count() const { return static_cast<std::int64_t>(labels.size()); }
    std::int64_t sample_bytes() const {
        return static_cast<std::int64_t>(channels) * height * width;
    }
    // Labels dense in [0, classes), every class with >= 1 train and test sample.
    void validate() const;
};

// Procedural pattern families: one oriented sinusoidal grating per class
// (frequency, orientation, phase center) with per-sample parameter jitter
// and pixel noise. Stands in for natural-image benchmarks at desk scale.
struct SyntheticSpec {
    int classes = 20;
    int train_per_class = 16;
    int test_per_class = 8;
    int image_size = 16;
    int channels = 1;
    double jitter = 0.1;  // scale of per-sample orientation/frequency/phase wobble
    double noise = 0.05;  // pixel noise std in [0,1] intensity units
    // Pairs of classes share orientation and phase and differ only by a small
    // frequency offset, emulating fine-grained benchmark confusion.
    bool fine_grained = false;
};

Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Ordered class-incremental task list over a dataset.
struct StreamSpec {
    int task_count = 0;
    std::uint64_t seed = 0;
    std::vector<std::uint16_t> class_order;
    std::vector<std::vector<std::uint16_t>> task_classes;  // sorted, disjoint
    std::vector<std::vector<std::int64_t>> train_indices;
    std::vector<std::vector<std::int64_t>> test_indices;

    int task_of_class(int label) const;
    // 0/1 mask over all classes with the task's classes set.
    std::vector<std::uint8_t> active_mask(int t, int classes) const;
    // Mask over classes seen in tasks 0..t (evaluation restricts predictions
    // to classes encountered so far; no per-sample task identity involved).
    std::vector<std::uint8_t> seen_mask(int t, int classes) const;
};

StreamSpec split_stream(const Dataset& dataset, int task_count, std::uint64_t seed);

// CILB dataset file: magic "CILB"; u16 version=1; u32 classes; u32 samples;
// u16 height, width; u8 channels; per sample u16 label, u8 split, pixels.
void write_cilb(const std::string& path, const Dataset& dataset);
Dataset read_cilb(const std::string& path);

// Training batches carry the task id; evaluation batches cannot, by type.
struct TrainBatch {
    std::vector<std::int64_t> indices;
    int task_id = 0;
};
struct EvalBatch {
    std::vector<std::int64_t> indices;
};

// Shuffled per epoch from (seed, task, epoch); last batch may be short.
std::vector<TrainBatch> train_batches(const StreamSpec& stream, int t,
                                      int batch_size, std::uint64_t seed,
                                      int epoch);
// Unshuffled walk of the task's test set.
std::vector<EvalBatch> eval_batches(const StreamSpec& stream, int t,
                                    int batch_size);

// {channels, H, W} image scaled to [0, 1].
Tensor sample_image(const Dataset& dataset, std::int64_t index);

}  // namespace plab

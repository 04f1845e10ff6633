#include "plab/data.hpp"

#include <algorithm>
#include <cmath>

#include "plab/binio.hpp"
#include "plab/rng.hpp"

namespace plab {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559005768;
}

void Dataset::validate() const {
    if (classes < 1) throw Error("dataset: needs at least one class");
    if (count() == 0) throw Error("dataset: empty");
    if (static_cast<std::int64_t>(pixels.size()) != count() * sample_bytes()) {
        throw Error("dataset: pixel buffer size mismatch");
    }
    std::vector<int> train_seen(classes, 0), test_seen(classes, 0);
    for (std::int64_t i = 0; i < count(); ++i) {
        if (labels[i] >= classes) throw Error("dataset: label out of range");
        if (splits[i] > 1) throw Error("dataset: bad split tag");
        (splits[i] == 0 ? train_seen : test_seen)[labels[i]]++;
    }
    for (int c = 0; c < classes; ++c) {
        if (train_seen[c] == 0 || test_seen[c] == 0) {
            throw Error("dataset: class " + std::to_string(c) +
                        " missing train or test samples");
        }
    }
}

Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    if (spec.classes < 2) throw Error("generate_synthetic: need >= 2 classes");
    if (spec.train_per_class < 1 || spec.test_per_class < 1) {
        throw Error("generate_synthetic: need train and test samples per class");
    }
    Rng rng(seed);
    const int s = spec.image_size;

    struct ClassParams {
        double theta, freq, phase;
    };
    std::vector<ClassParams> params(spec.classes);
    for (int c = 0; c < spec.classes; ++c) {
        if (spec.fine_grained && (c % 2 == 1)) {
            params[c] = params[c - 1];
            params[c].freq += 0.3;  // close relative of the previous class
        } else {
            params[c].theta = rng.uniform(0.0, kTwoPi / 2.0);
            params[c].freq = rng.uniform(1.5, 4.5);
            params[c].phase = rng.uniform(0.0, kTwoPi);
        }
    }

    Dataset d;
    d.classes = spec.classes;
    d.height = s;
    d.width = s;
    d.channels = spec.channels;
    const std::int64_t per_class = spec.train_per_class + spec.test_per_class;
    d.pixels.reserve(static_cast<std::size_t>(per_class * spec.classes *
                                              d.sample_bytes()));

    for (int c = 0; c < spec.classes; ++c) {
        for (std::int64_t i = 0; i < per_class; ++i) {
            const double theta = params[c].theta + spec.jitter * 0.25 * rng.gauss();
            const double freq = params[c].freq * (1.0 + spec.jitter * 0.05 * rng.gauss());
            const double phase = params[c].phase + spec.jitter * rng.gauss();
            for (int ch = 0; ch < spec.channels; ++ch) {
                const double chphase = phase + ch * (kTwoPi / 3.0);
                for (int y = 0; y < s; ++y) {
                    for (int x = 0; x < s; ++x) {
                        const double u = (x + 0.5) / s;
                        const double w = (y + 0.5) / s;
                        const double v = std::sin(
                            kTwoPi * freq * (u * std::cos(theta) + w * std::sin(theta)) +
                            chphase);
                        double g = 0.5 * (1.0 + v) + spec.noise * rng.gauss();
                        g = std::clamp(g, 0.0, 1.0);
                        d.pixels.push_back(
                            static_cast<std::uint8_t>(std::lround(g * 255.0)));
                    }
                }
            }
            d.labels.push_back(static_cast<std::uint16_t>(c));
            d.splits.push_back(i < spec.train_per_class ? 0 : 1);
        }
    }
    d.validate();
    return d;
}

int StreamSpec::task_of_class(int label) const {
    for (int t = 0; t < task_count; ++t) {
        for (const std::uint16_t c : task_classes[t]) {
            if (c == label) return t;
        }
    }
    return -1;
}

std::vector<std::uint8_t> StreamSpec::active_mask(int t, int classes) const {
    std::vector<std::uint8_t> mask(classes, 0);
    for (const std::uint16_t c : task_classes[t]) mask[c] = 1;
    return mask;
}

std::vector<std::uint8_t> StreamSpec::seen_mask(int t, int classes) const {
    std::vector<std::uint8_t> mask(classes, 0);
    for (int s = 0; s <= t && s < task_count; ++s) {
        for (const std::uint16_t c : task_classes[s]) mask[c] = 1;
    }
    return mask;
}

StreamSpec split_stream(const Dataset& dataset, int task_count, std::uint64_t seed) {
    dataset.validate();
    if (task_count < 1) throw Error("split_stream: task count must be positive");
    if (task_count > dataset.classes) {
        throw Error("split_stream: more tasks than classes");
    }
    StreamSpec stream;
    stream.task_count = task_count;
    stream.seed = seed;
    stream.class_order.resize(dataset.classes);
    for (int c = 0; c < dataset.classes; ++c) {
        stream.class_order[c] = static_cast<std::uint16_t>(c);
    }
    Rng rng(seed);
    rng.shuffle(stream.class_order);

    // Contiguous partition; the first (C mod T) tasks take the extra class.
    const int base = dataset.classes / task_count;
    const int extra = dataset.classes % task_count;
    std::size_t pos = 0;
    for (int t = 0; t < task_count; ++t) {
        const int size = base + (t < extra ? 1 : 0);
        std::vector<std::uint16_t> cls(stream.class_order.begin() + pos,
                                       stream.class_order.begin() + pos + size);
        std::sort(cls.begin(), cls.end());
        stream.task_classes.push_back(std::move(cls));
        pos += static_cast<std::size_t>(size);
    }

    std::vector<int> class_task(dataset.classes, -1);
    for (int t = 0; t < task_count; ++t) {
        for (const std::uint16_t c : stream.task_classes[t]) class_task[c] = t;
    }
    stream.train_indices.resize(task_count);
    stream.test_indices.resize(task_count);
    for (std::int64_t i = 0; i < dataset.count(); ++i) {
        const int t = class_task[dataset.labels[i]];
        (dataset.splits[i] == 0 ? stream.train_indices : stream.test_indices)[t]
            .push_back(i);
    }
    return stream;
}

void write_cilb(const std::string& path, const Dataset& dataset) {
    dataset.validate();  // rejects empty datasets before any bytes are written
    ByteWriter w;
    w.str("CILB");
    w.u16(1);
    w.u32(static_cast<std::uint32_t>(dataset.classes));
    w.u32(static_cast<std::uint32_t>(dataset.count()));
    w.u16(static_cast<std::uint16_t>(dataset.height));
    w.u16(static_cast<std::uint16_t>(dataset.width));
    w.u8(static_cast<std::uint8_t>(dataset.channels));
    const std::int64_t bytes = dataset.sample_bytes();
    for (std::int64_t i = 0; i < dataset.count(); ++i) {
        w.u16(dataset.labels[i]);
        w.u8(dataset.splits[i]);
        w.bytes(dataset.pixels.data() + i * bytes, static_cast<std::size_t>(bytes));
    }
    w.commit(path);
}

Dataset read_cilb(const std::string& path) {
    ByteReader r(path);
    r.expect_magic("CILB", "CILB");
    const std::uint16_t version = r.u16("version");
    if (version != 1) {
        throw FormatError("unsupported CILB version " + std::to_string(version),
                          r.offset());
    }
    Dataset d;
    d.classes = static_cast<int>(r.u32("class count"));
    const std::uint32_t samples = r.u32("sample count");
    d.height = r.u16("height");
    d.width = r.u16("width");
    d.channels = r.u8("channels");
    if (d.classes < 1 || d.height < 1 || d.width < 1 || d.channels < 1) {
        throw FormatError("non-positive dimensions in header", r.offset());
    }
    const std::int64_t bytes = d.sample_bytes();
    if (static_cast<std::uint64_t>(bytes) * samples + 3ULL * samples > r.remaining()) {
        throw FormatError("sample dimensions overflow the file size", r.offset());
    }
    d.pixels.resize(static_cast<std::size_t>(bytes) * samples);
    for (std::uint32_t i = 0; i < samples; ++i) {
        d.labels.push_back(r.u16("label"));
        d.splits.push_back(r.u8("split tag"));
        r.read_bytes(d.pixels.data() + static_cast<std::size_t>(i) * bytes,
                     static_cast<std::size_t>(bytes), "pixels");
    }
    if (!r.at_end()) {
        throw FormatError("trailing bytes after last sample", r.offset());
    }
    try {
        d.validate();
    } catch (const Error& e) {
        throw FormatError(e.what(), r.offset());
    }
    return d;
}

std::vector<TrainBatch> train_batches(const StreamSpec& stream, int t,
                                      int batch_size, std::uint64_t seed,
                                      int epoch) {
    if (t < 0 || t >= stream.task_count) throw Error("train_batches: bad task index");
    if (batch_size < 1) throw Error("train_batches: bad batch size");
    std::vector<std::int64_t> order = stream.train_indices[t];
    Rng rng(mix64(seed ^ mix64((static_cast<std::uint64_t>(t) << 32) ^
                               static_cast<std::uint64_t>(epoch + 1))));
    rng.shuffle(order);
    std::vector<TrainBatch> batches;
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
        TrainBatch b;
        b.task_id = t;
        const std::size_t end = std::min(order.size(), i + batch_size);
        b.indices.assign(order.begin() + i, order.begin() + end);
        batches.push_back(std::move(b));
    }
    return batches;
}

std::vector<EvalBatch> eval_batches(const StreamSpec& stream, int t,
                                    int batch_size) {
    if (t < 0 || t >= stream.task_count) throw Error("eval_batches: bad task index");
    if (batch_size < 1) throw Error("eval_batches: bad batch size");
    const std::vector<std::int64_t>& order = stream.test_indices[t];
    std::vector<EvalBatch> batches;
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
        EvalBatch b;
        const std::size_t end = std::min(order.size(), i + batch_size);
        b.indices.assign(order.begin() + i, order.begin() + end);
        batches.push_back(std::move(b));
    }
    return batches;
}

Tensor sample_image(const Dataset& dataset, std::int64_t index) {
    if (index < 0 || index >= dataset.count()) {
        throw Error("sample_image: index out of range");
    }
    Tensor img = Tensor::zeros({dataset.channels, dataset.height, dataset.width});
    const std::uint8_t* src = dataset.pixels.data() + index * dataset.sample_bytes();
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        img.data[i] = static_cast<double>(src[i]) / 255.0;
    }
    return img;
}

}  // namespace plab

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spectrumfm/error.hpp"

namespace spectrumfm::signals {

// Raw complex baseband frame. Samples are float32 so frames survive the
// on-disk payload format bit-exactly.
struct IQFrame {
    std::vector<float> i;
    std::vector<float> q;

    int n() const { return static_cast<int>(i.size()); }
};

// Amplitude/phase view of a frame; amplitude >= 0, phase in [-pi, pi].
struct APFrame {
    std::vector<double> amplitude;
    std::vector<double> phase;

    int n() const { return static_cast<int>(amplitude.size()); }
};

// Per-channel min-max normalized frame, every entry in [0, 1]. A constant
// channel normalizes to all zeros and raises its degenerate flag.
struct NormalizedFrame {
    std::array<std::vector<double>, 2> channels;  // [0] amplitude, [1] phase
    std::array<bool, 2> degenerate = {false, false};

    int n() const { return static_cast<int>(channels[0].size()); }
};

enum class Task { SS, AD, WTC };

enum class Modulation { BPSK, QPSK, PSK8, QAM16, NOISE_ONLY, INTERFERED };

const char* task_name(Task t);
Task task_from_name(const std::string& s);  // ConfigError on unknown
const char* modulation_name(Modulation m);
Modulation modulation_from_name(const std::string& s);  // ConfigError on unknown

// Recipe for one synthetic frame. The seed fully determines the frame.
struct ScenarioSpec {
    Task task = Task::SS;
    Modulation modulation = Modulation::QPSK;
    double snr_db = 0.0;
    // Interferer bandwidth relative to the signal bandwidth, in (0, 2].
    double interference_bandwidth_ratio = 1.0;
    // Scales the primary signal bandwidth (1.0 = nominal). Distinct values
    // give WTC "technologies" distinguishable bandwidth signatures.
    double bandwidth_scale = 1.0;
    uint64_t seed = 0;
};

struct LabeledFrame {
    IQFrame frame;
    int label = 0;
    double snr_db = 0.0;
    Task task = Task::SS;
};

struct DatasetManifest {
    int version = 1;
    long num_frames = 0;
    int frame_len = 0;
    int channels = 2;
    Task task = Task::SS;
    std::vector<std::string> class_names;
    std::vector<double> snr_levels;
    std::vector<int> labels;         // one per frame
    std::vector<double> frame_snrs;  // one per frame
};

// Eq.-style transform chain: cartesian -> polar -> per-channel min-max.
APFrame iq_to_ap(const IQFrame& frame);  // DataError on non-finite input
NormalizedFrame normalize(const APFrame& frame);

// Ground-truth components of a synthesized frame, for power measurements.
struct FrameParts {
    std::vector<double> signal_i, signal_q;
    std::vector<double> noise_i, noise_q;
    std::vector<double> interference_i, interference_q;
};

LabeledFrame synth_frame(const ScenarioSpec& spec, int frame_len = 128,
                         FrameParts* parts = nullptr);

std::pair<DatasetManifest, std::vector<LabeledFrame>> generate_dataset(
    std::span<const ScenarioSpec> specs, int per_spec_count, int frame_len = 128);

// File pair <base>.manifest.json + <base>.f32 (float32 LE, frame-major,
// channel I then channel Q, positions 0..N-1 within each channel).
void write_dataset(const std::string& base_path, const DatasetManifest& manifest,
                   std::span<const LabeledFrame> frames);
std::pair<DatasetManifest, std::vector<LabeledFrame>> read_dataset(const std::string& base_path);

// Label id for a (task, modulation) pair given the dataset class list.
int label_for(Task task, Modulation mod, const std::vector<std::string>& class_names);

double mean_power(std::span<const double> i, std::span<const double> q);

}  // namespace spectrumfm::signals

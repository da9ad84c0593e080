#include "spectrumfm/signals.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "spectrumfm/rng.hpp"

namespace spectrumfm::signals {

namespace {

constexpr double kRollOff = 0.35;       // root-raised-cosine excess bandwidth
constexpr double kNominalSps = 8.0;     // samples per symbol at bandwidth_scale 1
constexpr double kPulseSpan = 6.0;      // pulse truncated at +/- 6 symbol times
constexpr double kInterfererPower = 1.0;  // 0 dB relative to the primary signal

// Root-raised-cosine impulse response at tau symbol times, unit symbol rate.
double rrc_pulse(double tau, double beta) {
    const double pi = std::numbers::pi;
    const double abs_tau = std::abs(tau);
    if (abs_tau < 1e-9) return 1.0 + beta * (4.0 / pi - 1.0);
    const double singular = 1.0 / (4.0 * beta);
    if (std::abs(abs_tau - singular) < 1e-9) {
        const double a = (1.0 + 2.0 / pi) * std::sin(pi / (4.0 * beta));
        const double b = (1.0 - 2.0 / pi) * std::cos(pi / (4.0 * beta));
        return beta / std::sqrt(2.0) * (a + b);
    }
    const double num =
        std::sin(pi * tau * (1.0 - beta)) + 4.0 * beta * tau * std::cos(pi * tau * (1.0 + beta));
    const double den = pi * tau * (1.0 - 16.0 * beta * beta * tau * tau);
    return num / den;
}

void draw_symbol(Rng& rng, Modulation mod, double& si, double& sq) {
    switch (mod) {
        case Modulation::BPSK:
            si = rng.bernoulli(0.5) ? 1.0 : -1.0;
            sq = 0.0;
            return;
        case Modulation::QPSK: {
            const double inv = 1.0 / std::sqrt(2.0);
            si = (rng.bernoulli(0.5) ? 1.0 : -1.0) * inv;
            sq = (rng.bernoulli(0.5) ? 1.0 : -1.0) * inv;
            return;
        }
        case Modulation::PSK8: {
            const double theta = std::numbers::pi / 4.0 * static_cast<double>(rng.below(8));
            si = std::cos(theta);
            sq = std::sin(theta);
            return;
        }
        case Modulation::QAM16: {
            static const double levels[4] = {-3.0, -1.0, 1.0, 3.0};
            const double inv = 1.0 / std::sqrt(10.0);
            si = levels[rng.below(4)] * inv;
            sq = levels[rng.below(4)] * inv;
            return;
        }
        default:
            throw ConfigError("unknown modulation for symbol stream");
    }
}

// Pulse-shaped symbol stream sampled at integer instants; sps may be
// fractional, which is how interferer bandwidth ratios are realized.
void pulse_shaped_stream(Rng& rng, Modulation mod, double sps, int n, std::vector<double>& out_i,
                         std::vector<double>& out_q) {
    const int lead = static_cast<int>(std::ceil(kPulseSpan)) + 1;
    const int num_symbols = static_cast<int>(std::ceil(n / sps)) + 2 * lead;
    std::vector<double> sym_i(static_cast<size_t>(num_symbols));
    std::vector<double> sym_q(static_cast<size_t>(num_symbols));
    for (int k = 0; k < num_symbols; ++k)
        draw_symbol(rng, mod, sym_i[static_cast<size_t>(k)], sym_q[static_cast<size_t>(k)]);

    out_i.assign(static_cast<size_t>(n), 0.0);
    out_q.assign(static_cast<size_t>(n), 0.0);
    for (int t = 0; t < n; ++t) {
        const double center = t / sps + lead;
        const int k_lo = std::max(0, static_cast<int>(std::floor(center - kPulseSpan)));
        const int k_hi = std::min(num_symbols - 1, static_cast<int>(std::ceil(center + kPulseSpan)));
        double acc_i = 0.0, acc_q = 0.0;
        for (int k = k_lo; k <= k_hi; ++k) {
            const double tau = (t - (k - lead) * sps) / sps;
            if (std::abs(tau) > kPulseSpan) continue;
            const double g = rrc_pulse(tau, kRollOff);
            acc_i += sym_i[static_cast<size_t>(k)] * g;
            acc_q += sym_q[static_cast<size_t>(k)] * g;
        }
        out_i[static_cast<size_t>(t)] = acc_i;
        out_q[static_cast<size_t>(t)] = acc_q;
    }
}

void scale_to_power(std::vector<double>& i, std::vector<double>& q, double power) {
    const double p = mean_power(i, q);
    if (p <= 0.0) return;
    const double s = std::sqrt(power / p);
    for (double& x : i) x *= s;
    for (double& x : q) x *= s;
}

void add_gaussian_noise(Rng& rng, double variance, std::vector<double>& i, std::vector<double>& q) {
    const double s = std::sqrt(variance / 2.0);
    for (size_t t = 0; t < i.size(); ++t) {
        i[t] = s * rng.gaussian();
        q[t] = s * rng.gaussian();
    }
}

}  // namespace

const char* task_name(Task t) {
    switch (t) {
        case Task::SS: return "ss";
        case Task::AD: return "ad";
        case Task::WTC: return "wtc";
    }
    throw ConfigError("unknown task");
}

Task task_from_name(const std::string& s) {
    if (s == "ss") return Task::SS;
    if (s == "ad") return Task::AD;
    if (s == "wtc") return Task::WTC;
    throw ConfigError("unknown task: " + s);
}

const char* modulation_name(Modulation m) {
    switch (m) {
        case Modulation::BPSK: return "bpsk";
        case Modulation::QPSK: return "qpsk";
        case Modulation::PSK8: return "8psk";
        case Modulation::QAM16: return "16qam";
        case Modulation::NOISE_ONLY: return "noise_only";
        case Modulation::INTERFERED: return "interfered";
    }
    throw ConfigError("unknown modulation");
}

Modulation modulation_from_name(const std::string& s) {
    if (s == "bpsk") return Modulation::BPSK;
    if (s == "qpsk") return Modulation::QPSK;
    if (s == "8psk") return Modulation::PSK8;
    if (s == "16qam") return Modulation::QAM16;
    if (s == "noise_only") return Modulation::NOISE_ONLY;
    if (s == "interfered") return Modulation::INTERFERED;
    throw ConfigError("unknown modulation: " + s);
}

double mean_power(std::span<const double> i, std::span<const double> q) {
    double acc = 0.0;
    for (size_t t = 0; t < i.size(); ++t) acc += i[t] * i[t] + q[t] * q[t];
    return i.empty() ? 0.0 : acc / static_cast<double>(i.size());
}

APFrame iq_to_ap(const IQFrame& frame) {
    if (frame.i.size() != frame.q.size()) throw ShapeError("iq_to_ap: I/Q length mismatch");
    APFrame out;
    out.amplitude.resize(frame.i.size());
    out.phase.resize(frame.i.size());
    for (size_t p = 0; p < frame.i.size(); ++p) {
        const double iv = frame.i[p];
        const double qv = frame.q[p];
        if (!std::isfinite(iv) || !std::isfinite(qv))
            throw DataError("iq_to_ap: non-finite sample at position " + std::to_string(p));
        out.amplitude[p] = std::sqrt(iv * iv + qv * qv);
        out.phase[p] = std::atan2(qv, iv);
    }
    return out;
}

NormalizedFrame normalize(const APFrame& frame) {
    if (frame.amplitude.size() != frame.phase.size())
        throw ShapeError("normalize: channel length mismatch");
    NormalizedFrame out;
    const std::vector<double>* in[2] = {&frame.amplitude, &frame.phase};
    for (int ch = 0; ch < 2; ++ch) {
        const auto& x = *in[ch];
        auto& y = out.channels[static_cast<size_t>(ch)];
        y.resize(x.size());
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (double v : x) {
            if (!std::isfinite(v)) throw DataError("normalize: non-finite channel value");
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (hi == lo) {
            std::fill(y.begin(), y.end(), 0.0);
            out.degenerate[static_cast<size_t>(ch)] = true;
            continue;
        }
        const double inv = 1.0 / (hi - lo);
        for (size_t p = 0; p < x.size(); ++p) y[p] = (x[p] - lo) * inv;
    }
    return out;
}

LabeledFrame synth_frame(const ScenarioSpec& spec, int frame_len, FrameParts* parts) {
    if (frame_len < 2) throw ConfigError("synth_frame: frame_len must be >= 2");
    if (spec.bandwidth_scale <= 0.0) throw ConfigError("synth_frame: bandwidth_scale must be > 0");
    if (spec.modulation == Modulation::INTERFERED &&
        (spec.interference_bandwidth_ratio <= 0.0 || spec.interference_bandwidth_ratio > 2.0))
        throw ConfigError("synth_frame: interference_bandwidth_ratio must be in (0, 2]");
    if (!std::isfinite(spec.snr_db)) throw ConfigError("synth_frame: snr_db must be finite");

    const size_t n = static_cast<size_t>(frame_len);
    std::vector<double> sig_i(n, 0.0), sig_q(n, 0.0);
    std::vector<double> noise_i(n, 0.0), noise_q(n, 0.0);
    std::vector<double> intf_i, intf_q;

    Rng sym_rng(mix_seed(spec.seed, 0xA1));
    Rng noise_rng(mix_seed(spec.seed, 0xB2));
    Rng intf_rng(mix_seed(spec.seed, 0xC3));

    if (spec.modulation == Modulation::NOISE_ONLY) {
        add_gaussian_noise(noise_rng, 1.0, noise_i, noise_q);
    } else {
        const double sps = kNominalSps / spec.bandwidth_scale;
        // Interfered frames carry a QPSK primary, mirroring the overlapped
        // primary-user setup the anomaly task detects against.
        const Modulation primary =
            spec.modulation == Modulation::INTERFERED ? Modulation::QPSK : spec.modulation;
        pulse_shaped_stream(sym_rng, primary, sps, frame_len, sig_i, sig_q);
        scale_to_power(sig_i, sig_q, 1.0);

        add_gaussian_noise(noise_rng, std::pow(10.0, -spec.snr_db / 10.0), noise_i, noise_q);

        if (spec.modulation == Modulation::INTERFERED) {
            const double intf_sps = sps / spec.interference_bandwidth_ratio;
            pulse_shaped_stream(intf_rng, Modulation::QPSK, intf_sps, frame_len, intf_i, intf_q);
            scale_to_power(intf_i, intf_q, kInterfererPower);
            const double f_off = 0.6 / sps;  // pushes the interferer partly out of band
            const double phi0 = intf_rng.uniform(0.0, 2.0 * std::numbers::pi);
            for (size_t t = 0; t < n; ++t) {
                const double ph = 2.0 * std::numbers::pi * f_off * static_cast<double>(t) + phi0;
                const double c = std::cos(ph), s = std::sin(ph);
                const double xi = intf_i[t], xq = intf_q[t];
                intf_i[t] = xi * c - xq * s;
                intf_q[t] = xi * s + xq * c;
            }
        }
    }

    LabeledFrame out;
    out.task = spec.task;
    out.snr_db = spec.snr_db;
    switch (spec.task) {
        case Task::SS: out.label = spec.modulation == Modulation::NOISE_ONLY ? 0 : 1; break;
        case Task::AD: out.label = spec.modulation == Modulation::INTERFERED ? 1 : 0; break;
        case Task::WTC: out.label = static_cast<int>(spec.modulation); break;
    }
    out.frame.i.resize(n);
    out.frame.q.resize(n);
    for (size_t t = 0; t < n; ++t) {
        double xi = sig_i[t] + noise_i[t];
        double xq = sig_q[t] + noise_q[t];
        if (!intf_i.empty()) {
            xi += intf_i[t];
            xq += intf_q[t];
        }
        out.frame.i[t] = static_cast<float>(xi);
        out.frame.q[t] = static_cast<float>(xq);
    }
    if (parts) {
        parts->signal_i = std::move(sig_i);
        parts->signal_q = std::move(sig_q);
        parts->noise_i = std::move(noise_i);
        parts->noise_q = std::move(noise_q);
        parts->interference_i = std::move(intf_i);
        parts->interference_q = std::move(intf_q);
    }
    return out;
}

int label_for(Task task, Modulation mod, const std::vector<std::string>& class_names) {
    switch (task) {
        case Task::SS: return mod == Modulation::NOISE_ONLY ? 0 : 1;
        case Task::AD: return mod == Modulation::INTERFERED ? 1 : 0;
        case Task::WTC: {
            const std::string name = modulation_name(mod);
            for (size_t k = 0; k < class_names.size(); ++k)
                if (class_names[k] == name) return static_cast<int>(k);
            throw DataError("label_for: modulation " + name + " not in class list");
        }
    }
    throw ConfigError("label_for: unknown task");
}

std::pair<DatasetManifest, std::vector<LabeledFrame>> generate_dataset(
    std::span<const ScenarioSpec> specs, int per_spec_count, int frame_len) {
    if (specs.empty()) throw ConfigError("generate_dataset: empty spec list");
    if (per_spec_count < 1) throw ConfigError("generate_dataset: per_spec_count must be >= 1");
    const Task task = specs[0].task;
    for (const auto& s : specs)
        if (s.task != task) throw ConfigError("generate_dataset: mixed tasks in spec list");

    DatasetManifest manifest;
    manifest.task = task;
    manifest.frame_len = frame_len;
    switch (task) {
        case Task::SS: manifest.class_names = {"idle", "occupied"}; break;
        case Task::AD: manifest.class_names = {"normal", "anomalous"}; break;
        case Task::WTC:
            for (const auto& s : specs) {
                const std::string name = modulation_name(s.modulation);
                if (std::find(manifest.class_names.begin(), manifest.class_names.end(), name) ==
                    manifest.class_names.end())
                    manifest.class_names.push_back(name);
            }
            break;
    }
    for (const auto& s : specs) {
        if (std::find(manifest.snr_levels.begin(), manifest.snr_levels.end(), s.snr_db) ==
            manifest.snr_levels.end())
            manifest.snr_levels.push_back(s.snr_db);
    }
    std::sort(manifest.snr_levels.begin(), manifest.snr_levels.end());

    std::vector<LabeledFrame> frames;
    frames.reserve(specs.size() * static_cast<size_t>(per_spec_count));
    for (const auto& s : specs) {
        for (int rep = 0; rep < per_spec_count; ++rep) {
            ScenarioSpec fs = s;
            fs.seed = s.seed + static_cast<uint64_t>(rep);
            LabeledFrame f = synth_frame(fs, frame_len);
            f.label = label_for(task, s.modulation, manifest.class_names);
            manifest.labels.push_back(f.label);
            manifest.frame_snrs.push_back(f.snr_db);
            frames.push_back(std::move(f));
        }
    }
    manifest.num_frames = static_cast<long>(frames.size());
    return {std::move(manifest), std::move(frames)};
}

}  // namespace spectrumfm::signals

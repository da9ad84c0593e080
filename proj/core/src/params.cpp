#include "spectrumfm/params.hpp"

#include <algorithm>
#include <cmath>

namespace spectrumfm {

Param* ParamStore::create(std::string name, int rows, int cols) {
    if (find(name)) throw ConfigError("duplicate parameter name: " + name);
    auto p = std::make_unique<Param>();
    p->name = std::move(name);
    p->index = static_cast<int>(params_.size());
    p->value = Mat(rows, cols);
    Param* raw = p.get();
    params_.push_back(std::move(p));
    return raw;
}

Param* ParamStore::find(std::string_view name) const {
    for (const auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

Param* ParamStore::require(std::string_view name) const {
    Param* p = find(name);
    if (!p) throw ConfigError("missing parameter: " + std::string(name));
    return p;
}

void ParamStore::erase_prefix(std::string_view prefix) {
    params_.erase(std::remove_if(params_.begin(), params_.end(),
                                 [&](const auto& p) { return p->name.starts_with(prefix); }),
                  params_.end());
    for (size_t i = 0; i < params_.size(); ++i) params_[i]->index = static_cast<int>(i);
}

long ParamStore::total_scalars() const {
    long n = 0;
    for (const auto& p : params_) n += static_cast<long>(p->value.size());
    return n;
}

long ParamStore::trainable_scalars() const {
    long n = 0;
    for (const auto& p : params_)
        if (p->trainable) n += static_cast<long>(p->value.size());
    return n;
}

void ParamStore::set_all_trainable(bool t) {
    for (const auto& p : params_) p->trainable = t;
}

GradSink::GradSink(const ParamStore& store)
    : grads_(store.count()), touched_(store.count(), false) {}

void GradSink::accumulate(const Param& p, const Mat& g) {
    Mat& slot = grads_[p.index];
    if (!touched_[p.index]) {
        slot = g;
        touched_[p.index] = true;
        return;
    }
    for (size_t i = 0; i < slot.v.size(); ++i) slot.v[i] += g.v[i];
}

const Mat* GradSink::grad_for(const Param& p) const {
    return touched_[p.index] ? &grads_[p.index] : nullptr;
}

void GradSink::add_from(const GradSink& other) {
    for (size_t i = 0; i < grads_.size(); ++i) {
        if (!other.touched_[i]) continue;
        if (!touched_[i]) {
            grads_[i] = other.grads_[i];
            touched_[i] = true;
        } else {
            for (size_t k = 0; k < grads_[i].v.size(); ++k) grads_[i].v[k] += other.grads_[i].v[k];
        }
    }
}

void GradSink::clear() {
    std::fill(touched_.begin(), touched_.end(), false);
    for (auto& g : grads_) g.zero();
}

void init_xavier_uniform(Mat& m, int fan_in, int fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& x : m.v) x = rng.uniform(-bound, bound);
}

void init_gaussian(Mat& m, double stddev, Rng& rng) {
    for (double& x : m.v) x = stddev * rng.gaussian();
}

void AdamW::step(ParamStore& store, const GradSink& sink, double grad_scale) {
    if (moments_.size() != store.count()) moments_.resize(store.count());
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < store.count(); ++i) {
        Param* p = store.at(i);
        if (!p->trainable) continue;
        const Mat* g = sink.grad_for(*p);
        if (!g) continue;
        Moments& mo = moments_[i];
        if (mo.m.size() != p->value.size()) {
            mo.m = Mat(p->value.rows, p->value.cols);
            mo.v = Mat(p->value.rows, p->value.cols);
        }
        for (size_t k = 0; k < p->value.v.size(); ++k) {
            const double gk = g->v[k] * grad_scale;
            mo.m.v[k] = cfg_.beta1 * mo.m.v[k] + (1.0 - cfg_.beta1) * gk;
            mo.v.v[k] = cfg_.beta2 * mo.v.v[k] + (1.0 - cfg_.beta2) * gk * gk;
            const double mhat = mo.m.v[k] / bc1;
            const double vhat = mo.v.v[k] / bc2;
            p->value.v[k] -=
                cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p->value.v[k]);
        }
    }
}

}  // namespace spectrumfm

#include <cmath>

#include "algebraformer/errors.hpp"
#include "algebraformer/training.hpp"

namespace algebraformer::training {

SupervisedSet make_supervised(std::span<const bvp::LinearSystemSample> samples) {
    SupervisedSet set;
    set.inputs.reserve(samples.size());
    for (const auto& s : samples) {
        if (!set.inputs.empty() && s.b.size() != set.tokens()) {
            throw DatasetError("make_supervised: samples differ in dimension");
        }
        set.inputs.push_back(model::encode_system(s.A, s.b));
        set.targets.push_back(s.x);
        set.A.push_back(s.A);
        set.b.push_back(s.b);
    }
    return set;
}

SupervisedSet make_supervised(const bvp::Dataset& dataset) { return make_supervised(dataset.samples); }

SupervisedSet subset(const SupervisedSet& set, std::size_t begin, std::size_t end) {
    if (begin > end || end > set.size()) {
        throw DataError("subset: range out of bounds");
    }
    SupervisedSet out;
    const auto b = static_cast<std::ptrdiff_t>(begin);
    const auto e = static_cast<std::ptrdiff_t>(end);
    out.inputs.assign(set.inputs.begin() + b, set.inputs.begin() + e);
    out.targets.assign(set.targets.begin() + b, set.targets.begin() + e);
    if (!set.A.empty()) {
        out.A.assign(set.A.begin() + b, set.A.begin() + e);
        out.b.assign(set.b.begin() + b, set.b.begin() + e);
    }
    return out;
}

std::pair<SupervisedSet, SupervisedSet> split(const SupervisedSet& set, double test_fraction) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
        throw DataError("split: test fraction must lie in [0, 1)");
    }
    const auto n_test = static_cast<std::size_t>(std::round(test_fraction * static_cast<double>(set.size())));
    const std::size_t n_train = set.size() - n_test;
    return {subset(set, 0, n_train), subset(set, n_train, set.size())};
}

} // namespace algebraformer::training

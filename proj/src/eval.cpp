#include "mspa/eval.hpp"

#include "mspa/pseudo.hpp"

namespace mspa {

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& truth) {
    require_same_shape(pred, truth, "confusion");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, t = truth[i] != 0;
        if (p && t) ++c.tp;
        else if (p) ++c.fp;
        else if (t) ++c.fn;
        else ++c.tn;
    }
    return c;
}

namespace {

double ratio(std::int64_t num, std::int64_t den) {
    return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

Metrics metrics(const ConfusionCounts& c) {
    Metrics m;
    m.dsc = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
    m.iou = ratio(c.tp, c.tp + c.fp + c.fn);
    m.sen = ratio(c.tp, c.tp + c.fn);
    m.spe = ratio(c.tn, c.tn + c.fp);
    m.acc = ratio(c.tp + c.tn, c.total());
    return m;
}

Metrics mean_metrics(const std::vector<Metrics>& items) {
    Metrics m;
    if (items.empty()) return m;
    for (const auto& x : items) {
        m.dsc += x.dsc;
        m.iou += x.iou;
        m.sen += x.sen;
        m.spe += x.spe;
        m.acc += x.acc;
    }
    const double n = static_cast<double>(items.size());
    m.dsc /= n;
    m.iou /= n;
    m.sen /= n;
    m.spe /= n;
    m.acc /= n;
    return m;
}

BinaryMask predict_mask(const SegNetParams& params, const Tensor& image) {
    autograd::NoGradGuard no_grad;
    return plain_vote(forward(params, image).probs);
}

MetricsRecord evaluate(const SegNetParams& params, const std::vector<LabeledSample>& samples) {
    MetricsRecord r;
    for (const auto& s : samples) {
        r.ids.push_back(s.id);
        r.per_image.push_back(metrics(confusion(predict_mask(params, s.image), s.mask)));
    }
    r.mean = mean_metrics(r.per_image);
    return r;
}

MetricsRecord evaluate(const SegNetParams& params, const std::vector<Sample>& samples) {
    std::vector<LabeledSample> labeled;
    labeled.reserve(samples.size());
    for (const auto& s : samples) {
        if (!s.mask) throw DataError("evaluation sample '" + s.id + "' is unlabeled");
        labeled.push_back(as_labeled(s));
    }
    return evaluate(params, labeled);
}

}  // namespace mspa

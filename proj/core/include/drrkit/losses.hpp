#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "drrkit/image.hpp"
#include "drrkit/project.hpp"

namespace drrkit {

/// Balance weights of the composite objective.
struct LossWeights {
    double lambda_cyc = 10.0;
    double lambda_gca = 0.5;
    double lambda_l1 = 100.0;
    double lambda_is = 100.0;

    void validate() const;  // all weights must be >= 0 and finite
};

/// Model outputs for one case: the three decomposition stacks plus the
/// input radiograph they were decomposed from.
struct PredictionBundle {
    DrrStack wv;  ///< weighted-volume stack (attenuation-like channel images)
    DrrStack v;   ///< volume stack (per-pixel path length, cm)
    DrrStack m;   ///< mass stack (per-pixel areal density, g/cm^2)
    Image xray;   ///< input radiograph, same H x W as the stacks

    int objects() const { return wv.size(); }
    const DrrStack& stack(DrrKind kind) const;
    DrrStack& stack(DrrKind kind);
    /// Shapes, channel counts, pixel spacings and kind tags must agree.
    void validate() const;
};

/// Ground-truth supervision available for one case: per-object intensity
/// sums for each decomposition kind, plus pose-aligned target images for
/// the subset of objects (bones) that can be rigidly aligned.
struct SupervisionBundle {
    std::vector<double> sums_wv;  ///< per-object target S(wv_i); empty = absent
    std::vector<double> sums_v;
    std::vector<double> sums_m;

    std::vector<int> bone_indices;    ///< channel indices with aligned targets
    std::vector<Image> bones_wv;      ///< parallel to bone_indices
    std::vector<Image> bones_v;
    std::vector<Image> bones_m;

    const std::vector<double>& sums(DrrKind kind) const;
    const std::vector<Image>& bones(DrrKind kind) const;
    std::vector<double>& sums(DrrKind kind);
    std::vector<Image>& bones(DrrKind kind);
};

/// A loss value with its analytic gradients. Gradients are grouped into
/// named slots (one per differentiated input); each slot holds one image
/// per channel of that input. A slot that is absent means gradient flow
/// is stopped (or undefined) for that input by construction.
struct LossResult {
    double value = 0.0;
    std::map<std::string, std::vector<Image>> gradients;
    std::vector<std::string> flags;  ///< skipped terms, clamped scores, ...

    bool has_gradient(const std::string& slot) const { return gradients.count(slot) != 0; }
};

/// Gradient-correlation similarity of two images: the mean of the
/// zero-mean normalized cross-correlations of their horizontal and
/// vertical 3x3 Sobel responses. Value lies in [-1, 1].
///
/// Gradient slots: "a" and "b" (one image each).
/// Throws DegenerateError when either image has an (axis-wise) constant
/// Sobel response, which leaves the correlation undefined.
LossResult gc(const Image& a, const Image& b);

/// Value-only gradient correlation; nullopt when degenerate instead of
/// throwing. Cheap enough to sit inside optimizer inner loops.
std::optional<double> gc_value(const Image& a, const Image& b);

/// Reconstruction structure loss: -gc(xray, virtual_xray(wv)).
/// Gradient slot "wv" (same image repeated per channel, by linearity of
/// the channel sum). The radiograph is data; it has no gradient slot.
LossResult loss_gc_recon(const PredictionBundle& bundle);

/// Chained structure loss: -(1/N) sum_i [gc(wv_i, v_i) + gc(wv_i, m_i)].
/// The wv stack is treated as stopped (no "wv" slot ever); slots "v" and
/// "m" carry the gradients. Degenerate per-object terms are skipped and
/// flagged rather than failing the whole loss.
LossResult loss_gc_chain(const PredictionBundle& bundle);

/// Object-wise intensity-sum loss for one stack kind:
///   (1/(N*H*W)) * sum_i |S(pred_i) - target_i|
/// where S is the physical intensity sum (pixel sum times pixel area).
/// Gradient slot named after the kind ("wv"/"v"/"m").
LossResult loss_owis(const PredictionBundle& bundle, const SupervisionBundle& sup, DrrKind kind);

/// Aligned-bone supervision for one stack kind:
///   (1/N_b) * sum_{i in K} [lambda_l1 * ||pred_i - target_i||_1 - gc(pred_i, target_i)]
/// with the L1 norm summed over pixels. Empty K yields value 0 with no
/// gradients. Gradient slot named after the kind; channels outside K get
/// zero images.
LossResult loss_bone(const PredictionBundle& bundle, const SupervisionBundle& sup, DrrKind kind,
                     const LossWeights& w);

/// Discriminator score loss: mean(log d_real) + mean(log(1 - d_fake)).
/// Scores must lie in [0, 1]; exact 0/1 entries are clamped to
/// [eps, 1-eps] (eps = 1e-7) and flagged. Slots "d_real" and "d_fake".
LossResult loss_gan(const Image& d_real, const Image& d_fake);

/// Round-trip consistency loss: mean|x_rt - x| + mean|y_rt - y|.
/// Slots "x_rt" and "y_rt"; the originals are data.
LossResult loss_cycle(const Image& x, const Image& x_rt, const Image& y, const Image& y_rt);

/// Itemized decomposition of the composite training objective. Term
/// values are stored unweighted; the total applies the weights:
///   total = gan + lambda_gca*gc_recon + gc_chain
///         + lambda_is*(owis_wv+owis_v+owis_m) + (bone_wv+bone_v+bone_m)
struct LossBreakdown {
    double total = 0.0;
    double gan = 0.0;
    double gc_recon = 0.0;
    double gc_chain = 0.0;
    double owis_wv = 0.0, owis_v = 0.0, owis_m = 0.0;
    double bone_wv = 0.0, bone_v = 0.0, bone_m = 0.0;
    LossWeights weights;
    std::vector<std::string> flags;
};

struct FullLossResult {
    LossResult result;      ///< total value + combined gradients ("wv","v","m")
    LossBreakdown breakdown;
};

/// The composite objective. The adversarial part is supplied as a
/// precomputed scalar (discriminators are outside this library).
FullLossResult loss_full(const PredictionBundle& bundle, const SupervisionBundle& sup,
                         double gan_total, const LossWeights& w);

/// JSON report: {total, terms:{gan, gc_recon, gc_chain, owis:{...},
/// bone:{...}}, weights:{...}, flags:[...]}.
std::string loss_report_json(const LossBreakdown& b);

}  // namespace drrkit

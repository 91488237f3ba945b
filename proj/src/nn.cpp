#include "agsa/nn.hpp"

#include <cmath>
#include <limits>

#include "agsa/error.hpp"

namespace agsa::nn {

using namespace agsa::ad;

std::size_t count_scalars(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

Tensor init_uniform(ad::Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::vector<double> data(ad::numel(shape));
  for (double& v : data) v = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(data), true);
}

Tensor init_zeros(ad::Shape shape) { return Tensor::zeros(std::move(shape), true); }

// Linear / 1x1 conv ----------------------------------------------------------

void LinearParams::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

LinearParams init_linear(std::size_t in, std::size_t out, Rng& rng) {
  return {init_uniform({in, out}, in, rng), init_zeros({out})};
}

LinearParams zero_linear(std::size_t in, std::size_t out) { return {init_zeros({in, out}), init_zeros({out})}; }

Tensor linear(const LinearParams& p, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != p.in_dim()) {
    throw ShapeError("linear: expected (B," + std::to_string(p.in_dim()) + "), got " + to_string(x.shape()));
  }
  return bias_add(matmul(x, p.weight), p.bias);
}

void Conv1x1Params::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Conv1x1Params init_conv1x1(std::size_t in, std::size_t out, Rng& rng) {
  return {init_uniform({out, in, 1, 1}, in, rng), init_zeros({out})};
}

Conv1x1Params zero_conv1x1(std::size_t in, std::size_t out) {
  return {init_zeros({out, in, 1, 1}), init_zeros({out})};
}

Tensor conv1x1(const Conv1x1Params& p, const Tensor& x) { return conv_bias_add(conv2d(x, p.weight, 1, 0), p.bias); }

// CNN encoder -------------------------------------------------------------

std::array<std::array<std::size_t, 2>, 3> CnnEncoderConfig::feature_sizes() const {
  std::array<std::array<std::size_t, 2>, 3> sizes{};
  std::size_t h = height, w = width;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t k = kEncoderKernels[i];
    if (strides[i] == 0) throw ConfigError("encoder stride must be >= 1");
    if (h + 2 * paddings[i] < k || w + 2 * paddings[i] < k) {
      throw ConfigError("encoder conv" + std::to_string(i + 1) + " (" + std::to_string(k) + "x" + std::to_string(k) +
                        ") does not fit a " + std::to_string(h) + "x" + std::to_string(w) + " map with padding " +
                        std::to_string(paddings[i]));
    }
    h = (h + 2 * paddings[i] - k) / strides[i] + 1;
    w = (w + 2 * paddings[i] - k) / strides[i] + 1;
    sizes[i] = {h, w};
  }
  return sizes;
}

std::size_t CnnEncoderConfig::flat_features() const {
  const auto s = feature_sizes();
  return channels[2] * s[2][0] * s[2][1];
}

std::array<std::size_t, 3> auto_paddings(std::size_t height, std::size_t width,
                                         const std::array<std::size_t, 3>& strides) {
  std::array<std::size_t, 3> best{};
  std::size_t best_sum = std::numeric_limits<std::size_t>::max();
  for (std::size_t p1 = 0; p1 < kEncoderKernels[0]; ++p1)
    for (std::size_t p2 = 0; p2 < kEncoderKernels[1]; ++p2)
      for (std::size_t p3 = 0; p3 < kEncoderKernels[2]; ++p3) {
        const std::array<std::size_t, 3> pads = {p1, p2, p3};
        std::size_t h = height, w = width;
        bool ok = true;
        for (std::size_t i = 0; i < 3 && ok; ++i) {
          const std::size_t k = kEncoderKernels[i];
          if (h + 2 * pads[i] < k || w + 2 * pads[i] < k) {
            ok = false;
            break;
          }
          h = (h + 2 * pads[i] - k) / strides[i] + 1;
          w = (w + 2 * pads[i] - k) / strides[i] + 1;
        }
        if (!ok || h < 2 || w < 2) continue;
        if (p1 + p2 + p3 < best_sum) {
          best_sum = p1 + p2 + p3;
          best = pads;
        }
      }
  if (best_sum == std::numeric_limits<std::size_t>::max()) {
    throw ConfigError("no padding makes the encoder fit a " + std::to_string(height) + "x" + std::to_string(width) +
                      " input");
  }
  return best;
}

void CnnEncoderParams::collect(ParamList& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < 3; ++i) {
    out.push_back({prefix + ".conv" + std::to_string(i + 1) + ".weight", conv_weight[i]});
    out.push_back({prefix + ".conv" + std::to_string(i + 1) + ".bias", conv_bias[i]});
  }
  proj.collect(out, prefix + ".proj");
}

CnnEncoderParams init_cnn_encoder(const CnnEncoderConfig& config, Rng& rng) {
  CnnEncoderParams p;
  p.config = config;
  const std::size_t flat = config.flat_features();  // validates geometry
  std::size_t in_ch = config.in_channels;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t k = kEncoderKernels[i];
    p.conv_weight[i] = init_uniform({config.channels[i], in_ch, k, k}, in_ch * k * k, rng);
    p.conv_bias[i] = init_zeros({config.channels[i]});
    in_ch = config.channels[i];
  }
  p.proj = init_linear(flat, config.out_dim, rng);
  return p;
}

Tensor cnn_features(const CnnEncoderParams& p, const Tensor& x) {
  const auto& c = p.config;
  if (x.rank() != 4 || x.dim(1) != c.in_channels || x.dim(2) != c.height || x.dim(3) != c.width) {
    throw ShapeError("encoder expects (B," + std::to_string(c.in_channels) + "," + std::to_string(c.height) + "," +
                     std::to_string(c.width) + "), got " + to_string(x.shape()));
  }
  Tensor h = x;
  for (std::size_t i = 0; i < 3; ++i) {
    h = relu(conv_bias_add(conv2d(h, p.conv_weight[i], c.strides[i], c.paddings[i]), p.conv_bias[i]));
  }
  return h;
}

Tensor cnn_head(const CnnEncoderParams& p, const Tensor& features) {
  const std::size_t batch = features.dim(0);
  return linear(p.proj, reshape(features, {batch, features.size() / batch}));
}

Tensor hwc_to_nchw(const Tensor& image) {
  const bool batched = image.rank() == 4;
  if (image.rank() != 3 && !batched) throw ShapeError("image must be (H,W,C) or (B,H,W,C), got " + to_string(image.shape()));
  const std::size_t b = batched ? image.dim(0) : 1;
  const std::size_t off = batched ? 1 : 0;
  const std::size_t h = image.dim(off), w = image.dim(off + 1), ch = image.dim(off + 2);
  std::vector<double> out(image.size());
  const auto src = image.data();
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t k = 0; k < ch; ++k)
          out[((n * ch + k) * h + y) * w + x] = src[((n * h + y) * w + x) * ch + k];
  return Tensor({b, ch, h, w}, std::move(out));
}

Tensor cnn_encoder_forward(const CnnEncoderParams& p, const Tensor& image_hwc) {
  const Tensor out = cnn_head(p, cnn_features(p, hwc_to_nchw(image_hwc)));
  if (image_hwc.rank() == 3) return reshape(out, {p.config.out_dim});
  return out;
}

// Multi-head attention ----------------------------------------------------

void MhaParams::collect(ParamList& out_list, const std::string& prefix) const {
  out_list.push_back({prefix + ".wq", wq});
  out_list.push_back({prefix + ".wk", wk});
  out_list.push_back({prefix + ".wv", wv});
  out.collect(out_list, prefix + ".out");
}

MhaParams init_mha(std::size_t model_dim, std::size_t heads, Rng& rng) {
  if (heads == 0 || model_dim % heads != 0) {
    throw ConfigError("attention model dim " + std::to_string(model_dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  MhaParams p;
  p.heads = heads;
  p.wq = init_uniform({model_dim, model_dim}, model_dim, rng);
  p.wk = init_uniform({model_dim, model_dim}, model_dim, rng);
  p.wv = init_uniform({model_dim, model_dim}, model_dim, rng);
  p.out = init_linear(model_dim, model_dim, rng);
  return p;
}

namespace {

// (B,n,d) x (d,e) -> (B,n,e)
Tensor project_tokens(const Tensor& x, const Tensor& w) {
  const std::size_t b = x.dim(0), n = x.dim(1);
  return reshape(matmul(reshape(x, {b * n, x.dim(2)}), w), {b, n, w.dim(1)});
}

}  // namespace

MhaOutput mha_forward(const MhaParams& p, const Tensor& query, const Tensor& context) {
  const std::size_t dm = p.model_dim();
  if (p.heads == 0 || dm % p.heads != 0) {
    throw ConfigError("attention model dim " + std::to_string(dm) + " not divisible by " + std::to_string(p.heads) +
                      " heads");
  }
  const bool unbatched = query.rank() == 2;
  const Tensor q_in = unbatched ? reshape(query, {1, query.dim(0), query.dim(1)}) : query;
  const Tensor c_in = context.rank() == 2 ? reshape(context, {1, context.dim(0), context.dim(1)}) : context;
  if (q_in.rank() != 3 || c_in.rank() != 3 || q_in.dim(2) != dm || c_in.dim(2) != dm || q_in.dim(0) != c_in.dim(0)) {
    throw ShapeError("attention expects query (B,n_q," + std::to_string(dm) + ") and context (B,n_k," +
                     std::to_string(dm) + "), got " + to_string(query.shape()) + " and " + to_string(context.shape()));
  }
  const std::size_t batch = q_in.dim(0), nq = q_in.dim(1);
  const std::size_t dh = dm / p.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  const Tensor q = project_tokens(q_in, p.wq);
  const Tensor k = project_tokens(c_in, p.wk);
  const Tensor v = project_tokens(c_in, p.wv);

  MhaOutput result;
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < p.heads; ++h) {
    const Tensor qh = slice(q, 2, h * dh, dh);
    const Tensor kh = slice(k, 2, h * dh, dh);
    const Tensor vh = slice(v, 2, h * dh, dh);
    const Tensor weights = softmax(scale(bmm(qh, kh, false, true), inv_sqrt));
    heads.push_back(bmm(weights, vh));
    result.weights.push_back(unbatched ? reshape(weights, {weights.dim(1), weights.dim(2)}) : weights);
  }
  const Tensor merged = p.heads == 1 ? heads[0] : concat(heads, 2);
  Tensor out = reshape(linear(p.out, reshape(merged, {batch * nq, dm})), {batch, nq, dm});
  result.output = unbatched ? reshape(out, {nq, dm}) : out;
  return result;
}

// GRU -----------------------------------------------------------------------

void GruParams::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".w_z", w_z});
  out.push_back({prefix + ".w_r", w_r});
  out.push_back({prefix + ".w_c", w_c});
  out.push_back({prefix + ".u_z", u_z});
  out.push_back({prefix + ".u_r", u_r});
  out.push_back({prefix + ".u_c", u_c});
  out.push_back({prefix + ".b_z", b_z});
  out.push_back({prefix + ".b_r", b_r});
  out.push_back({prefix + ".b_c", b_c});
}

GruParams init_gru(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
  GruParams p;
  p.w_z = init_uniform({input_dim, hidden_dim}, input_dim, rng);
  p.w_r = init_uniform({input_dim, hidden_dim}, input_dim, rng);
  p.w_c = init_uniform({input_dim, hidden_dim}, input_dim, rng);
  p.u_z = init_uniform({hidden_dim, hidden_dim}, hidden_dim, rng);
  p.u_r = init_uniform({hidden_dim, hidden_dim}, hidden_dim, rng);
  p.u_c = init_uniform({hidden_dim, hidden_dim}, hidden_dim, rng);
  p.b_z = init_zeros({hidden_dim});
  p.b_r = init_zeros({hidden_dim});
  p.b_c = init_zeros({hidden_dim});
  return p;
}

Tensor gru_step(const GruParams& p, const Tensor& input, const Tensor& h_prev) {
  const bool unbatched = input.rank() == 1;
  const Tensor x = unbatched ? reshape(input, {1, input.dim(0)}) : input;
  const Tensor h = h_prev.rank() == 1 ? reshape(h_prev, {1, h_prev.dim(0)}) : h_prev;
  if (x.rank() != 2 || x.dim(1) != p.input_dim() || h.rank() != 2 || h.dim(1) != p.hidden_dim() ||
      h.dim(0) != x.dim(0)) {
    throw ShapeError("gru_step: expected input (B," + std::to_string(p.input_dim()) + ") and hidden (B," +
                     std::to_string(p.hidden_dim()) + "), got " + to_string(input.shape()) + " and " +
                     to_string(h_prev.shape()));
  }
  const Tensor z = sigmoid(bias_add(add(matmul(x, p.w_z), matmul(h, p.u_z)), p.b_z));
  const Tensor r = sigmoid(bias_add(add(matmul(x, p.w_r), matmul(h, p.u_r)), p.b_r));
  const Tensor c = ad::tanh(bias_add(add(matmul(x, p.w_c), matmul(mul(r, h), p.u_c)), p.b_c));
  // (1 - z) * h + z * c, written as h - z*h + z*c.
  const Tensor h_new = add(sub(h, mul(z, h)), mul(z, c));
  return unbatched ? reshape(h_new, {p.hidden_dim()}) : h_new;
}

}  // namespace agsa::nn

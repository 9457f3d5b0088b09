#include "asmmd/conformer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "asmmd/errors.hpp"
#include "wire.hpp"

namespace asmmd {

std::int64_t BackboneConfig::conv_frames() const {
  return n_samples - temporal_kernel + 1;
}

std::int64_t BackboneConfig::pooled_tokens() const {
  return (conv_frames() - pool_window) / pool_stride + 1;
}

std::int64_t BackboneConfig::token_count() const {
  return single_token_front_end ? 1 : pooled_tokens();
}

void BackboneConfig::validate() const {
  if (n_channels < 1) throw ConfigError("backbone: n_channels must be >= 1");
  if (n_samples < 1) throw ConfigError("backbone: n_samples must be >= 1");
  if (d_model < 1) throw ConfigError("backbone: d_model must be >= 1");
  if (n_heads < 1) throw ConfigError("backbone: n_heads must be >= 1");
  if (d_model % n_heads != 0) {
    throw ConfigError("backbone: d_model must be divisible by n_heads");
  }
  if (n_layers < 0) throw ConfigError("backbone: n_layers must be >= 0");
  if (ffn_mult < 1) throw ConfigError("backbone: ffn_mult must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("backbone: dropout must lie in [0, 1)");
  }
  if (temporal_kernel < 1) {
    throw ConfigError("backbone: temporal_kernel must be >= 1");
  }
  if (n_temporal_filters < 1) {
    throw ConfigError("backbone: n_temporal_filters must be >= 1");
  }
  if (pool_window < 1 || pool_stride < 1) {
    throw ConfigError("backbone: pooling window and stride must be >= 1");
  }
  if (n_classes < 2) throw ConfigError("backbone: n_classes must be >= 2");
  if (head_dim < 1) throw ConfigError("backbone: head_dim must be >= 1");
  if (head_hidden < 0) throw ConfigError("backbone: head_hidden must be >= 0");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) {
    throw ConfigError("backbone: bn_momentum must lie in (0, 1]");
  }
  if (bn_eps <= 0.0 || ln_eps <= 0.0) {
    throw ConfigError("backbone: eps values must be positive");
  }
  if (conv_frames() < 1) {
    throw ConfigError(
        "backbone: temporal kernel " + std::to_string(temporal_kernel) +
        " over " + std::to_string(n_samples) + " samples leaves " +
        std::to_string(conv_frames()) + " frames; need >= 1");
  }
  if (conv_frames() < pool_window || pooled_tokens() < 1) {
    throw ConfigError(
        "backbone: pooling " + std::to_string(pool_window) + "/" +
        std::to_string(pool_stride) + " over " +
        std::to_string(conv_frames()) + " conv frames yields " +
        std::to_string(conv_frames() < pool_window ? 0 : pooled_tokens()) +
        " tokens; need >= 1");
  }
}

namespace {

Value glorot(Rng& rng, std::vector<std::int64_t> shape, std::int64_t fan_in,
             std::int64_t fan_out, const std::string& name) {
  Tensor t = Tensor::zeros(std::move(shape));
  const double limit =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.data) v = rng.uniform(-limit, limit);
  return Value::leaf(std::move(t), true, name);
}

Value zeros_param(std::vector<std::int64_t> shape, const std::string& name) {
  return Value::leaf(Tensor::zeros(std::move(shape)), true, name);
}

Tensor sinusoidal_encoding(std::int64_t tokens, std::int64_t d) {
  Tensor pe = Tensor::zeros({tokens, d});
  for (std::int64_t pos = 0; pos < tokens; ++pos) {
    for (std::int64_t i = 0; i < d; i += 2) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe.at(pos, i) = std::sin(angle);
      if (i + 1 < d) pe.at(pos, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

}  // namespace

Model Model::build(const BackboneConfig& cfg, std::uint64_t seed,
                   bool pooled_bn) {
  cfg.validate();
  Model m;
  m.cfg_ = cfg;
  m.pooled_bn_ = pooled_bn;
  Rng rng(seed);

  const std::int64_t f = cfg.n_temporal_filters;
  const std::int64_t k = cfg.temporal_kernel;
  const std::int64_t spatial_in = cfg.n_channels * f;
  const std::int64_t d = cfg.d_model;
  const std::int64_t qkv = cfg.n_heads * cfg.head_dim;
  const std::int64_t ffn = cfg.ffn_mult * d;

  auto reg = [&m](const std::string& name, const Value& v) {
    m.named_.emplace_back(name, v);
  };

  m.conv1_w = glorot(rng, {f, k, 1}, k, f * k, "conv1.w");
  m.conv1_b = zeros_param({f}, "conv1.b");
  reg("conv1.w", m.conv1_w);
  reg("conv1.b", m.conv1_b);

  m.bn1_ = std::make_shared<SplitBatchNorm>(f, cfg.bn_momentum, cfg.bn_eps,
                                            pooled_bn);
  reg("bn1.gamma", m.bn1_->gamma());
  reg("bn1.beta", m.bn1_->beta());

  m.conv2_w = glorot(rng, {f, 1, spatial_in}, spatial_in, f, "conv2.w");
  m.conv2_b = zeros_param({f}, "conv2.b");
  reg("conv2.w", m.conv2_w);
  reg("conv2.b", m.conv2_b);

  m.bn2_ = std::make_shared<SplitBatchNorm>(f, cfg.bn_momentum, cfg.bn_eps,
                                            pooled_bn);
  reg("bn2.gamma", m.bn2_->gamma());
  reg("bn2.beta", m.bn2_->beta());

  m.proj_w = glorot(rng, {f, d}, f, d, "proj.w");
  m.proj_b = zeros_param({d}, "proj.b");
  reg("proj.w", m.proj_w);
  reg("proj.b", m.proj_b);

  m.pos_encoding_ = sinusoidal_encoding(cfg.token_count(), d);

  m.layers_.resize(static_cast<std::size_t>(cfg.n_layers));
  for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
    EncoderLayer& e = m.layers_[static_cast<std::size_t>(l)];
    const std::string p = "enc" + std::to_string(l) + ".";
    e.ln1_g = Value::leaf(Tensor::full({d}, 1.0), true, p + "ln1.g");
    e.ln1_b = zeros_param({d}, p + "ln1.b");
    e.wq = glorot(rng, {d, qkv}, d, qkv, p + "attn.wq");
    e.bq = zeros_param({qkv}, p + "attn.bq");
    e.wk = glorot(rng, {d, qkv}, d, qkv, p + "attn.wk");
    e.bk = zeros_param({qkv}, p + "attn.bk");
    e.wv = glorot(rng, {d, qkv}, d, qkv, p + "attn.wv");
    e.bv = zeros_param({qkv}, p + "attn.bv");
    e.wo = glorot(rng, {qkv, d}, qkv, d, p + "attn.wo");
    e.bo = zeros_param({d}, p + "attn.bo");
    e.ln2_g = Value::leaf(Tensor::full({d}, 1.0), true, p + "ln2.g");
    e.ln2_b = zeros_param({d}, p + "ln2.b");
    e.w1 = glorot(rng, {d, ffn}, d, ffn, p + "ffn.w1");
    e.b1 = zeros_param({ffn}, p + "ffn.b1");
    e.w2 = glorot(rng, {ffn, d}, ffn, d, p + "ffn.w2");
    e.b2 = zeros_param({d}, p + "ffn.b2");
    reg(p + "ln1.g", e.ln1_g);
    reg(p + "ln1.b", e.ln1_b);
    reg(p + "attn.wq", e.wq);
    reg(p + "attn.bq", e.bq);
    reg(p + "attn.wk", e.wk);
    reg(p + "attn.bk", e.bk);
    reg(p + "attn.wv", e.wv);
    reg(p + "attn.bv", e.bv);
    reg(p + "attn.wo", e.wo);
    reg(p + "attn.bo", e.bo);
    reg(p + "ln2.g", e.ln2_g);
    reg(p + "ln2.b", e.ln2_b);
    reg(p + "ffn.w1", e.w1);
    reg(p + "ffn.b1", e.b1);
    reg(p + "ffn.w2", e.w2);
    reg(p + "ffn.b2", e.b2);
  }

  if (cfg.head_hidden > 0) {
    m.head_w = glorot(rng, {d, cfg.head_hidden}, d, cfg.head_hidden, "head.w1");
    m.head_b = zeros_param({cfg.head_hidden}, "head.b1");
    m.head2_w = glorot(rng, {cfg.head_hidden, cfg.n_classes}, cfg.head_hidden,
                       cfg.n_classes, "head.w2");
    m.head2_b = zeros_param({cfg.n_classes}, "head.b2");
    reg("head.w1", m.head_w);
    reg("head.b1", m.head_b);
    reg("head.w2", m.head2_w);
    reg("head.b2", m.head2_b);
  } else {
    m.head_w = glorot(rng, {d, cfg.n_classes}, d, cfg.n_classes, "head.w");
    m.head_b = zeros_param({cfg.n_classes}, "head.b");
    reg("head.w", m.head_w);
    reg("head.b", m.head_b);
  }
  return m;
}

Value Model::encoder_block(std::size_t layer, const Value& h,
                           std::int64_t batch, Mode mode, Rng& rng) {
  const EncoderLayer& e = layers_[layer];
  const std::int64_t t = cfg_.token_count();
  const std::int64_t d = cfg_.d_model;
  const std::int64_t heads = cfg_.n_heads;
  const std::int64_t dh = cfg_.head_dim;

  auto split_heads = [&](const Value& z) {
    return reshape(transpose(reshape(z, {batch, t, heads, dh}), 1, 2),
                   {batch * heads, t, dh});
  };

  Value a = reshape(layer_norm(h, e.ln1_g, e.ln1_b, cfg_.ln_eps),
                    {batch * t, d});
  Value q = split_heads(add_bias(matmul(a, e.wq), e.bq));
  Value k = split_heads(add_bias(matmul(a, e.wk), e.bk));
  Value v = split_heads(add_bias(matmul(a, e.wv), e.bv));

  Value scores =
      scale(bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh)));
  Value probs = dropout(softmax_lastdim(scores), cfg_.dropout, rng, mode);
  Value ctx = bmm(probs, v);
  Value merged = reshape(transpose(reshape(ctx, {batch, heads, t, dh}), 1, 2),
                         {batch * t, heads * dh});
  Value attn_out =
      dropout(add_bias(matmul(merged, e.wo), e.bo), cfg_.dropout, rng, mode);
  Value h1 = add(h, reshape(attn_out, {batch, t, d}));

  Value f = reshape(layer_norm(h1, e.ln2_g, e.ln2_b, cfg_.ln_eps),
                    {batch * t, d});
  Value z1 = dropout(gelu(add_bias(matmul(f, e.w1), e.b1)), cfg_.dropout, rng,
                     mode);
  Value z2 = dropout(add_bias(matmul(z1, e.w2), e.b2), cfg_.dropout, rng,
                     mode);
  return add(h1, reshape(z2, {batch, t, d}));
}

Value Model::forward(const Tensor& x, Domain domain, Mode mode, Rng& rng) {
  if (x.rank() != 3 || x.dim(1) != cfg_.n_channels ||
      x.dim(2) != cfg_.n_samples) {
    throw ShapeError("model forward: expected (batch, " +
                     std::to_string(cfg_.n_channels) + ", " +
                     std::to_string(cfg_.n_samples) + "), got " +
                     shape_str(x.shape));
  }
  const std::int64_t batch = x.dim(0);
  if (batch < 1) throw ShapeError("model forward: empty batch");

  bn1_->use_domain(domain);
  bn2_->use_domain(domain);

  Tensor xin = x;
  xin.shape = {batch * cfg_.n_channels, cfg_.n_samples, 1};
  Value h = Value::leaf(std::move(xin), false, "input");

  h = conv1d_valid(h, conv1_w, conv1_b);
  h = bn1_->forward(h, mode);
  h = reshape(h, {batch, cfg_.n_channels, cfg_.conv_frames(),
                  cfg_.n_temporal_filters});
  h = transpose(h, 1, 2);
  h = reshape(h, {batch, cfg_.conv_frames(),
                  cfg_.n_channels * cfg_.n_temporal_filters});
  h = conv1d_valid(h, conv2_w, conv2_b);
  h = bn2_->forward(h, mode);
  h = avg_pool1d(h, cfg_.pool_window, cfg_.pool_stride);

  const std::int64_t tp = cfg_.pooled_tokens();
  h = reshape(h, {batch * tp, cfg_.n_temporal_filters});
  h = add_bias(matmul(h, proj_w), proj_b);
  h = reshape(h, {batch, tp, cfg_.d_model});
  if (cfg_.single_token_front_end) {
    h = reshape(mean_axis(h, 1), {batch, 1, cfg_.d_model});
  }
  if (cfg_.use_positional_encoding) {
    h = add_rows(h, Value::leaf(pos_encoding_, false, "pos_encoding"));
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = encoder_block(l, h, batch, mode, rng);
  }
  Value pooled = mean_axis(h, 1);
  Value logits;
  if (cfg_.head_hidden > 0) {
    Value hidden = gelu(add_bias(matmul(pooled, head_w), head_b));
    logits = add_bias(matmul(hidden, head2_w), head2_b);
  } else {
    logits = add_bias(matmul(pooled, head_w), head_b);
  }
  if (!logits.val().all_finite()) {
    throw NumericError("model forward: non-finite logits");
  }
  return logits;
}

std::vector<Value> Model::parameters() const {
  std::vector<Value> out;
  out.reserve(named_.size());
  for (const auto& [name, v] : named_) out.push_back(v);
  return out;
}

std::int64_t Model::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, v] : named_) n += v.val().numel();
  return n;
}

std::vector<std::pair<std::string, Tensor*>> Model::buffer_slots() const {
  std::vector<std::pair<std::string, Tensor*>> out;
  auto add_bn = [&](const std::string& prefix, SplitBatchNorm& bn) {
    if (bn.pooled()) {
      out.emplace_back(prefix + ".running_mean.pooled",
                       &bn.mutable_running_mean(Domain::source));
      out.emplace_back(prefix + ".running_var.pooled",
                       &bn.mutable_running_var(Domain::source));
    } else {
      out.emplace_back(prefix + ".running_mean.S",
                       &bn.mutable_running_mean(Domain::source));
      out.emplace_back(prefix + ".running_var.S",
                       &bn.mutable_running_var(Domain::source));
      out.emplace_back(prefix + ".running_mean.T",
                       &bn.mutable_running_mean(Domain::target));
      out.emplace_back(prefix + ".running_var.T",
                       &bn.mutable_running_var(Domain::target));
    }
  };
  add_bn("bn1", *bn1_);
  add_bn("bn2", *bn2_);
  return out;
}

Model::Snapshot Model::snapshot() const {
  Snapshot snap;
  snap.params.reserve(named_.size());
  for (const auto& [name, v] : named_) snap.params.push_back(v.val());
  for (const auto& [name, buf] : buffer_slots()) {
    snap.buffers.push_back(*buf);
  }
  return snap;
}

void Model::restore(const Snapshot& snap) {
  if (snap.params.size() != named_.size()) {
    throw ShapeError("model restore: parameter count mismatch");
  }
  for (std::size_t i = 0; i < named_.size(); ++i) {
    Tensor& dst = named_[i].second.mutable_val();
    if (!dst.same_shape(snap.params[i])) {
      throw ShapeError("model restore: shape mismatch for " + named_[i].first);
    }
    dst = snap.params[i];
  }
  const auto slots = buffer_slots();
  if (snap.buffers.size() != slots.size()) {
    throw ShapeError("model restore: buffer count mismatch");
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    *slots[i].second = snap.buffers[i];
  }
}

namespace {

constexpr char kCkptMagic[4] = {'A', 'S', 'M', 'C'};
constexpr std::uint32_t kCkptVersion = 1;

void put_tensor(std::string& buf, const std::string& name, const Tensor& t) {
  wire::put_string(buf, name);
  wire::put_u32(buf, static_cast<std::uint32_t>(t.rank()));
  for (std::int64_t d : t.shape) {
    wire::put_u32(buf, static_cast<std::uint32_t>(d));
  }
  for (double v : t.data) wire::put_f64(buf, v);
}

Tensor read_tensor(wire::Cursor& cur, const std::string& expect_name,
                   const std::string& path) {
  const std::string name = cur.string();
  if (name != expect_name) {
    throw FormatError(path + ": expected tensor " + expect_name + ", found " +
                      name);
  }
  const std::uint32_t rank = cur.u32();
  if (rank > 8) throw FormatError(path + ": implausible tensor rank");
  std::vector<std::int64_t> shape;
  std::int64_t numel = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape.push_back(static_cast<std::int64_t>(cur.u32()));
    numel *= shape.back();
    if (numel > (std::int64_t{1} << 33)) {
      throw FormatError(path + ": implausible tensor size");
    }
  }
  Tensor t = Tensor::zeros(shape);
  for (std::int64_t i = 0; i < numel; ++i) t.data[static_cast<std::size_t>(i)] = cur.f64();
  return t;
}

}  // namespace

void Model::save_checkpoint(const std::string& path) const {
  std::string buf;
  buf.append(kCkptMagic, 4);
  wire::put_u32(buf, kCkptVersion);
  const std::int64_t ints[] = {cfg_.n_channels,     cfg_.n_samples,
                               cfg_.d_model,        cfg_.n_heads,
                               cfg_.n_layers,       cfg_.ffn_mult,
                               cfg_.temporal_kernel, cfg_.n_temporal_filters,
                               cfg_.pool_window,    cfg_.pool_stride,
                               cfg_.n_classes,      cfg_.head_dim,
                               cfg_.head_hidden};
  for (std::int64_t v : ints) {
    wire::put_u32(buf, static_cast<std::uint32_t>(v));
  }
  wire::put_f64(buf, cfg_.dropout);
  wire::put_f64(buf, cfg_.bn_momentum);
  wire::put_f64(buf, cfg_.bn_eps);
  wire::put_f64(buf, cfg_.ln_eps);
  std::uint8_t flags = 0;
  if (cfg_.use_positional_encoding) flags |= 1;
  if (cfg_.single_token_front_end) flags |= 2;
  if (pooled_bn_) flags |= 4;
  wire::put_u8(buf, flags);

  const auto slots = buffer_slots();
  wire::put_u32(buf,
                static_cast<std::uint32_t>(named_.size() + slots.size()));
  for (const auto& [name, v] : named_) put_tensor(buf, name, v.val());
  for (const auto& [name, t] : slots) put_tensor(buf, name, *t);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("save_checkpoint: cannot open " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("save_checkpoint: short write to " + path);
}

Model Model::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("load_checkpoint: read failure on " + path);

  wire::Cursor cur(buf, path);
  if (std::memcmp(cur.bytes(4).data(), kCkptMagic, 4) != 0) {
    throw BadMagicError(path + ": bad magic, not a checkpoint file");
  }
  if (const std::uint32_t v = cur.u32(); v != kCkptVersion) {
    throw BadVersionError(path + ": unsupported checkpoint version " +
                          std::to_string(v));
  }

  BackboneConfig cfg;
  std::int64_t* ints[] = {&cfg.n_channels,     &cfg.n_samples,
                          &cfg.d_model,        &cfg.n_heads,
                          &cfg.n_layers,       &cfg.ffn_mult,
                          &cfg.temporal_kernel, &cfg.n_temporal_filters,
                          &cfg.pool_window,    &cfg.pool_stride,
                          &cfg.n_classes,      &cfg.head_dim,
                          &cfg.head_hidden};
  for (std::int64_t* p : ints) *p = static_cast<std::int64_t>(cur.u32());
  cfg.dropout = cur.f64();
  cfg.bn_momentum = cur.f64();
  cfg.bn_eps = cur.f64();
  cfg.ln_eps = cur.f64();
  const std::uint8_t flags = cur.u8();
  cfg.use_positional_encoding = (flags & 1) != 0;
  cfg.single_token_front_end = (flags & 2) != 0;
  const bool pooled_bn = (flags & 4) != 0;

  Model m = build(cfg, 0, pooled_bn);
  const auto slots = m.buffer_slots();
  const std::uint32_t count = cur.u32();
  if (count != m.named_.size() + slots.size()) {
    throw FormatError(path + ": tensor count mismatch");
  }
  for (auto& [name, v] : m.named_) {
    Tensor t = read_tensor(cur, name, path);
    if (!t.same_shape(v.val())) {
      throw FormatError(path + ": shape mismatch for " + name);
    }
    v.mutable_val() = std::move(t);
  }
  for (const auto& [name, buf_ptr] : slots) {
    Tensor t = read_tensor(cur, name, path);
    if (!t.same_shape(*buf_ptr)) {
      throw FormatError(path + ": shape mismatch for " + name);
    }
    *buf_ptr = std::move(t);
  }
  if (cur.remaining() != 0) {
    throw FormatError(path + ": trailing bytes after checkpoint payload");
  }
  return m;
}

}  // namespace asmmd

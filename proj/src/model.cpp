#include "see/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "see/errors.hpp"

namespace see {

std::vector<ConvStageSpec> default_trunk() {
  return {{8, 3, 1, 2, 2}, {16, 3, 1, 2, 2}, {16, 3, 1, 2, 2}, {32, 3, 1, 2, 2}, {32, 3, 1, 2, 2}};
}

std::vector<ExitSpec> ArchitectureSpec::exits() const {
  std::vector<ExitSpec> all = early_exits;
  ExitSpec terminal;
  terminal.attach_after_layer = static_cast<int>(trunk.size());
  terminal.data_fraction = 1.0;
  terminal.entropy_threshold = 0.0;
  terminal.loss_weight = terminal_loss_weight;
  all.push_back(terminal);
  return all;
}

std::vector<double> ArchitectureSpec::data_fractions() const {
  std::vector<double> out;
  for (const auto& e : early_exits) out.push_back(e.data_fraction);
  out.push_back(1.0);
  return out;
}

std::vector<double> ArchitectureSpec::loss_weights() const {
  std::vector<double> out;
  for (const auto& e : early_exits) out.push_back(e.loss_weight);
  out.push_back(terminal_loss_weight);
  return out;
}

std::vector<double> ArchitectureSpec::thresholds() const {
  std::vector<double> out;
  for (const auto& e : early_exits) out.push_back(e.entropy_threshold);
  return out;
}

std::vector<int> ArchitectureSpec::slice_ends() const {
  return slice_ends_for(data_fractions(), segment_length);
}

ArchitectureSpec ArchitectureSpec::baseline() const {
  ArchitectureSpec b = *this;
  b.early_exits.clear();
  return b;
}

void ArchitectureSpec::validate() const {
  // Constructing the layout performs every check.
  (void)SeeCnnModel::assemble(*this, 0);
}

namespace {

int checked_stage(const std::string& where, int length, const nn::ConvShape& conv,
                  const nn::PoolShape& pool) {
  if (length < conv.kernel_width) {
    throw ShapeError(where + ": input length " + std::to_string(length) +
                     " is shorter than kernel width " + std::to_string(conv.kernel_width));
  }
  const int conv_len = conv.output_length(length);
  if (conv_len < pool.width) {
    throw ShapeError(where + ": conv output length " + std::to_string(conv_len) +
                     " is shorter than pool width " + std::to_string(pool.width));
  }
  return pool.output_length(conv_len);
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

std::uint64_t stage_macs(const nn::ConvShape& conv, int input_length) {
  return static_cast<std::uint64_t>(conv.output_length(input_length)) * conv.weight_count();
}

}  // namespace

SeeCnnModel::SeeCnnModel(ArchitectureSpec spec) : spec_(std::move(spec)) {
  const auto& s = spec_;
  require(s.channels >= 1, "channels must be >= 1");
  require(s.segment_length >= 1, "segment_length must be >= 1");
  require(s.num_classes >= 2, "num_classes must be >= 2");
  require(!s.trunk.empty(), "trunk needs at least one stage");
  require(s.fc_hidden >= 1, "fc_hidden must be >= 1");
  require(s.head.filters >= 1 && s.head.kernel_width >= 1 && s.head.hidden >= 1 &&
              s.head.pool_width >= 1 && s.head.pool_stride >= 1,
          "exit head dimensions must be >= 1");
  require(s.late_kernel_width >= 1, "late_kernel_width must be >= 1");
  require(s.terminal_loss_weight > 0 && std::isfinite(s.terminal_loss_weight),
          "terminal loss weight must be > 0");
  for (const auto& st : s.trunk) {
    require(st.out_channels >= 1 && st.kernel_width >= 1 && st.stride >= 1 &&
                st.pool_width >= 1 && st.pool_stride >= 1,
            "trunk stage dimensions must be >= 1");
  }
  const int stages = static_cast<int>(s.trunk.size());
  int previous_attach = 0;
  for (std::size_t e = 0; e < s.early_exits.size(); ++e) {
    const auto& x = s.early_exits[e];
    const std::string name = "early exit " + std::to_string(e + 1);
    require(x.attach_after_layer > previous_attach,
            name + ": attachment layers must be strictly increasing");
    require(x.attach_after_layer < stages,
            name + ": must attach before the last trunk stage (" + std::to_string(stages) + ")");
    require(x.data_fraction > 0.0 && x.data_fraction < 1.0,
            name + ": data fraction must lie in (0, 1)");
    require(e == 0 || x.data_fraction > s.early_exits[e - 1].data_fraction,
            name + ": data fractions must be strictly increasing");
    require(std::isfinite(x.entropy_threshold) && x.entropy_threshold >= 0.0,
            name + ": threshold must be finite and >= 0");
    require(std::isfinite(x.loss_weight) && x.loss_weight > 0.0, name + ": loss weight must be > 0");
    previous_attach = x.attach_after_layer;
    attach_.push_back(x.attach_after_layer);
  }
  const std::vector<int> ends = s.slice_ends();

  std::size_t offset = 0;
  auto add_block = [&](const std::string& name, std::size_t size, BlockRole role) {
    blocks_.push_back({{name, offset, size}, role});
    const std::size_t start = offset;
    offset += size;
    return start;
  };
  auto add_conv = [&](const std::string& name, ConvRef& ref, BlockRole role) {
    ref.offset = add_block(name + ".weight", ref.conv.weight_count(), role);
    add_block(name + ".bias", ref.conv.bias_count(), role);
  };
  auto add_dense = [&](const std::string& name, DenseRef& ref, BlockRole role) {
    ref.offset = add_block(name + ".weight", ref.shape.weight_count(), role);
    add_block(name + ".bias", ref.shape.bias_count(), role);
  };

  // Shape walk: trunk stages, with exit heads and late-input splices at the
  // attachment points.
  int length = ends[0];
  int channels = s.channels;
  int downsample = 1;
  std::size_t next_exit = 0;
  for (int layer = 1; layer <= stages; ++layer) {
    const auto& st = s.trunk[static_cast<std::size_t>(layer - 1)];
    ConvRef ref;
    ref.conv = {channels, st.out_channels, st.kernel_width, st.stride};
    ref.pool = {st.pool_width, st.pool_stride};
    length = checked_stage("trunk layer " + std::to_string(layer), length, ref.conv, ref.pool);
    channels = st.out_channels;
    downsample *= st.stride * st.pool_stride;
    trunk_.push_back(ref);

    if (next_exit < attach_.size() && attach_[next_exit] == layer) {
      const int e = static_cast<int>(next_exit) + 1;
      HeadRef head;
      head.stage.conv = {channels, s.head.filters, s.head.kernel_width, 1};
      head.stage.pool = {s.head.pool_width, s.head.pool_stride};
      const int head_len =
          checked_stage("exit " + std::to_string(e) + " head", length, head.stage.conv, head.stage.pool);
      head.hidden.shape = {s.head.filters * head_len, s.head.hidden};
      head.out.shape = {s.head.hidden, s.num_classes};
      heads_.push_back(head);

      ConvRef late;
      late.conv = {s.channels, channels, s.late_kernel_width, 1};
      late.pool = {downsample, downsample};
      const int slice_len = ends[next_exit + 1] - ends[next_exit];
      const int late_len = checked_stage("late-input block " + std::to_string(e) + " (" +
                                             std::to_string(slice_len) + "-sample slice)",
                                         slice_len, late.conv, late.pool);
      late_.push_back(late);
      late_out_len_.push_back(late_len);
      length += late_len;
      ++next_exit;
    }
    trunk_out_len_.push_back(length);
  }
  fc_hidden_.shape = {channels * length, s.fc_hidden};
  fc_out_.shape = {s.fc_hidden, s.num_classes};

  for (int layer = 1; layer <= stages; ++layer) {
    add_conv("trunk." + std::to_string(layer) + ".conv", trunk_[static_cast<std::size_t>(layer - 1)],
             BlockRole::baseline);
  }
  add_dense("fc.hidden", fc_hidden_, BlockRole::baseline);
  add_dense("fc.out", fc_out_, BlockRole::baseline);
  for (std::size_t e = 0; e < heads_.size(); ++e) {
    const std::string p = "exit." + std::to_string(e + 1);
    add_conv(p + ".conv", heads_[e].stage, BlockRole::early_exit);
    add_dense(p + ".hidden", heads_[e].hidden, BlockRole::early_exit);
    add_dense(p + ".out", heads_[e].out, BlockRole::early_exit);
  }
  for (std::size_t e = 0; e < late_.size(); ++e) {
    add_conv("late." + std::to_string(e + 1) + ".conv", late_[e], BlockRole::late_input);
  }
  params_.assign(offset, 0.0);
}

SeeCnnModel SeeCnnModel::assemble(const ArchitectureSpec& spec, std::uint64_t seed) {
  SeeCnnModel model(spec);
  std::mt19937_64 rng(seed);
  auto init_conv = [&](const ConvRef& r) {
    const int fan_in = r.conv.in_channels * r.conv.kernel_width;
    nn::init_uniform_fan_in(std::span<double>(model.params_).subspan(r.offset, r.conv.parameter_count()),
                            fan_in, rng);
  };
  auto init_dense = [&](const DenseRef& r) {
    nn::init_uniform_fan_in(
        std::span<double>(model.params_).subspan(r.offset, r.shape.parameter_count()),
        r.shape.in_dim, rng);
  };
  for (const auto& r : model.trunk_) init_conv(r);
  init_dense(model.fc_hidden_);
  init_dense(model.fc_out_);
  for (const auto& h : model.heads_) {
    init_conv(h.stage);
    init_dense(h.hidden);
    init_dense(h.out);
  }
  for (const auto& r : model.late_) init_conv(r);
  return model;
}

std::vector<nn::ParameterBlock> SeeCnnModel::parameter_blocks() const {
  std::vector<nn::ParameterBlock> out;
  for (const auto& b : blocks_) out.push_back(b.block);
  return out;
}

std::size_t SeeCnnModel::baseline_parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) {
    if (b.role == BlockRole::baseline) n += b.block.size;
  }
  return n;
}

double SeeCnnModel::memory_kb() const {
  return static_cast<double>(parameter_count()) * 8.0 / 1024.0;
}

double SeeCnnModel::baseline_memory_kb() const {
  return static_cast<double>(baseline_parameter_count()) * 8.0 / 1024.0;
}

int SeeCnnModel::head_feature_size(int early_exit) const {
  return heads_.at(static_cast<std::size_t>(early_exit)).hidden.shape.in_dim;
}

int SeeCnnModel::terminal_feature_size() const { return fc_hidden_.shape.in_dim; }

std::uint64_t SeeCnnModel::macs_to_exit(int exit_index) const {
  if (exit_index < 1 || exit_index > num_exits()) {
    throw UsageError("exit index " + std::to_string(exit_index) + " outside 1.." +
                     std::to_string(num_exits()));
  }
  const auto ends = spec_.slice_ends();
  const int n = exit_index - 1;
  const int last_stage = n < static_cast<int>(attach_.size()) ? attach_[static_cast<std::size_t>(n)]
                                                              : static_cast<int>(trunk_.size());
  std::uint64_t total = 0;
  int length = ends[0];
  std::size_t splice = 0;
  for (int layer = 1; layer <= last_stage; ++layer) {
    const auto& r = trunk_[static_cast<std::size_t>(layer - 1)];
    total += stage_macs(r.conv, length);
    length = trunk_out_len_[static_cast<std::size_t>(layer - 1)];
    if (splice < attach_.size() && attach_[splice] == layer) {
      // Pre-splice length feeds the head.
      const int head_in = length - late_out_len_[splice];
      const auto& h = heads_[splice];
      if (static_cast<int>(splice) <= n) {
        total += stage_macs(h.stage.conv, head_in) + h.hidden.shape.weight_count() +
                 h.out.shape.weight_count();
      }
      if (static_cast<int>(splice) < n) {
        const int slice_len = ends[splice + 1] - ends[splice];
        total += stage_macs(late_[splice].conv, slice_len);
      } else {
        length = head_in;
      }
      ++splice;
    }
  }
  if (n == static_cast<int>(attach_.size())) {
    total += fc_hidden_.shape.weight_count() + fc_out_.shape.weight_count();
  }
  return total;
}

std::span<const double> SeeCnnModel::weights(const ConvRef& r) const {
  return std::span<const double>(params_).subspan(r.offset, r.conv.weight_count());
}
std::span<const double> SeeCnnModel::bias(const ConvRef& r) const {
  return std::span<const double>(params_).subspan(r.offset + r.conv.weight_count(),
                                                  r.conv.bias_count());
}
std::span<const double> SeeCnnModel::weights(const DenseRef& r) const {
  return std::span<const double>(params_).subspan(r.offset, r.shape.weight_count());
}
std::span<const double> SeeCnnModel::bias(const DenseRef& r) const {
  return std::span<const double>(params_).subspan(r.offset + r.shape.weight_count(),
                                                  r.shape.bias_count());
}

Tensor2 SeeCnnModel::run_stage(const ConvRef& ref, const Tensor2& input, StageCache* cache) const {
  Tensor2 conv = nn::conv1d_forward(input, ref.conv, weights(ref), bias(ref));
  nn::PoolResult pool = nn::maxpool1d_forward(conv, ref.pool.width, ref.pool.stride);
  Tensor2 out = nn::relu_forward(pool.output);
  if (cache != nullptr) {
    cache->input = input;
    cache->conv_out = std::move(conv);
    cache->pool = std::move(pool);
    cache->output = out;
  }
  return out;
}

std::vector<double> SeeCnnModel::run_dense_head(const DenseRef& hidden, const DenseRef& out,
                                                std::span<const double> flat,
                                                DenseHeadCache* cache) const {
  std::vector<double> pre = nn::dense_forward(flat, hidden.shape, weights(hidden), bias(hidden));
  std::vector<double> post = pre;
  nn::relu_inplace(post);
  std::vector<double> logits = nn::dense_forward(post, out.shape, weights(out), bias(out));
  if (cache != nullptr) {
    cache->flat_input.assign(flat.begin(), flat.end());
    cache->hidden_pre = std::move(pre);
    cache->hidden_post = std::move(post);
  }
  return logits;
}

Tensor2 SeeCnnModel::backward_stage(const ConvRef& ref, const StageCache& cache,
                                    const Tensor2& grad_out, std::span<double> grads) const {
  Tensor2 g_pool = nn::relu_backward(cache.pool.output, grad_out);
  Tensor2 g_conv = nn::maxpool1d_backward(g_pool, cache.pool.argmax, cache.conv_out.channels(),
                                          cache.conv_out.length());
  return nn::conv1d_backward(cache.input, ref.conv, weights(ref), g_conv,
                             grads.subspan(ref.offset, ref.conv.weight_count()),
                             grads.subspan(ref.offset + ref.conv.weight_count(), ref.conv.bias_count()));
}

std::vector<double> SeeCnnModel::backward_dense_head(const DenseRef& hidden, const DenseRef& out,
                                                     const DenseHeadCache& cache,
                                                     std::span<const double> grad_logits,
                                                     std::span<double> grads) const {
  std::vector<double> g_hidden = nn::dense_backward(
      cache.hidden_post, out.shape, weights(out), grad_logits,
      grads.subspan(out.offset, out.shape.weight_count()),
      grads.subspan(out.offset + out.shape.weight_count(), out.shape.bias_count()));
  nn::relu_backward_inplace(cache.hidden_pre, g_hidden);
  return nn::dense_backward(
      cache.flat_input, hidden.shape, weights(hidden), g_hidden,
      grads.subspan(hidden.offset, hidden.shape.weight_count()),
      grads.subspan(hidden.offset + hidden.shape.weight_count(), hidden.shape.bias_count()));
}

void ForwardCache::clear() {
  trunk.clear();
  heads.clear();
  head_dense.clear();
  late.clear();
  splice_at.clear();
  terminal = {};
  exits_reached = 0;
}

CnnSession::CnnSession(const SeeCnnModel& model, ForwardCache* cache)
    : model_(model), cache_(cache) {
  if (cache_ != nullptr) {
    cache_->clear();
    const std::size_t early = model_.heads_.size();
    cache_->trunk.resize(model_.trunk_.size());
    cache_->heads.resize(early);
    cache_->head_dense.resize(early);
    cache_->late.resize(early);
    cache_->splice_at.assign(early, 0);
  }
}

std::vector<double> CnnSession::advance(const Tensor2& slice) {
  return nn::softmax(advance_logits(slice));
}

std::vector<double> CnnSession::advance_logits(const Tensor2& slice) {
  const int n = next_exit_;
  const int exits = model_.num_exits();
  if (n >= exits) throw UsageError("all " + std::to_string(exits) + " exits already evaluated");
  const auto ends = model_.spec_.slice_ends();
  const int expected = ends[static_cast<std::size_t>(n)] -
                       (n == 0 ? 0 : ends[static_cast<std::size_t>(n - 1)]);
  if (slice.channels() != model_.spec_.channels || slice.length() != expected) {
    throw ShapeError("slice " + std::to_string(n + 1) + " is " + slice.shape_string() +
                     ", expected [" + std::to_string(model_.spec_.channels) + "x" +
                     std::to_string(expected) + "]");
  }
  const auto early = static_cast<int>(model_.heads_.size());
  if (n == 0) {
    map_ = slice;
  } else {
    const auto e = static_cast<std::size_t>(n - 1);
    Tensor2 late = model_.run_stage(model_.late_[e], slice, cache_ ? &cache_->late[e] : nullptr);
    if (cache_ != nullptr) cache_->splice_at[e] = map_.length();
    map_ = Tensor2::concat_time(map_, late);
  }
  const int target = n < early ? model_.attach_[static_cast<std::size_t>(n)]
                               : static_cast<int>(model_.trunk_.size());
  for (int layer = stages_done_ + 1; layer <= target; ++layer) {
    const auto i = static_cast<std::size_t>(layer - 1);
    map_ = model_.run_stage(model_.trunk_[i], map_, cache_ ? &cache_->trunk[i] : nullptr);
  }
  stages_done_ = target;

  std::vector<double> logits;
  if (n < early) {
    const auto& head = model_.heads_[static_cast<std::size_t>(n)];
    const auto i = static_cast<std::size_t>(n);
    Tensor2 h = model_.run_stage(head.stage, map_, cache_ ? &cache_->heads[i] : nullptr);
    logits = model_.run_dense_head(head.hidden, head.out, h.values(),
                                   cache_ ? &cache_->head_dense[i] : nullptr);
  } else {
    logits = model_.run_dense_head(model_.fc_hidden_, model_.fc_out_, map_.values(),
                                   cache_ ? &cache_->terminal : nullptr);
  }
  ++next_exit_;
  if (cache_ != nullptr) cache_->exits_reached = next_exit_;
  return logits;
}

std::unique_ptr<StagedSession> SeeCnnModel::start() const {
  return std::make_unique<CnnSession>(*this);
}

std::vector<Tensor2> SeeCnnModel::slice_segment(const Tensor2& segment) const {
  if (segment.channels() != spec_.channels || segment.length() != spec_.segment_length) {
    throw ShapeError("segment " + segment.shape_string() + " does not match model input [" +
                     std::to_string(spec_.channels) + "x" + std::to_string(spec_.segment_length) +
                     "]");
  }
  std::vector<Tensor2> slices;
  int begin = 0;
  for (int end : spec_.slice_ends()) {
    slices.push_back(segment.slice_time(begin, end));
    begin = end;
  }
  return slices;
}

std::vector<double> SeeCnnModel::forward_to_exit(std::span<const Tensor2> slices,
                                                 int exit_index) const {
  if (exit_index < 1 || exit_index > num_exits()) {
    throw UsageError("exit index " + std::to_string(exit_index) + " outside 1.." +
                     std::to_string(num_exits()));
  }
  if (static_cast<int>(slices.size()) < exit_index) {
    throw UsageError("exit " + std::to_string(exit_index) + " needs " +
                     std::to_string(exit_index) + " slices, got " + std::to_string(slices.size()));
  }
  CnnSession session(*this);
  std::vector<double> logits;
  for (int n = 0; n < exit_index; ++n) logits = session.advance_logits(slices[static_cast<std::size_t>(n)]);
  return logits;
}

std::vector<std::vector<double>> SeeCnnModel::forward_all_exits(const Tensor2& segment,
                                                                ForwardCache* cache) const {
  const auto slices = slice_segment(segment);
  CnnSession session(*this, cache);
  std::vector<std::vector<double>> out;
  for (const auto& s : slices) out.push_back(session.advance_logits(s));
  return out;
}

void SeeCnnModel::backward(const ForwardCache& cache,
                           std::span<const std::vector<double>> logit_grads,
                           std::span<double> grads) const {
  const int reached = cache.exits_reached;
  if (reached == 0) throw UsageError("backward called before any forward pass was cached");
  if (static_cast<int>(logit_grads.size()) != reached) {
    throw UsageError("backward needs one logit gradient per reached exit (" +
                     std::to_string(reached) + "), got " + std::to_string(logit_grads.size()));
  }
  if (grads.size() != params_.size()) throw ShapeError("gradient buffer does not match parameters");
  for (const auto& g : logit_grads) {
    if (!g.empty() && static_cast<int>(g.size()) != spec_.num_classes) {
      throw ShapeError("logit gradient has " + std::to_string(g.size()) + " entries, expected " +
                       std::to_string(spec_.num_classes));
    }
  }

  const int early = static_cast<int>(heads_.size());
  const int last = reached - 1;
  int layer = 0;
  Tensor2 g;
  if (last == early) {
    layer = static_cast<int>(trunk_.size());
    const auto& out_map = cache.trunk.back().output;
    const auto& gl = logit_grads[static_cast<std::size_t>(last)];
    if (gl.empty()) {
      g = Tensor2(out_map.channels(), out_map.length());
    } else {
      auto flat = backward_dense_head(fc_hidden_, fc_out_, cache.terminal, gl, grads);
      g = Tensor2(out_map.channels(), out_map.length(), std::move(flat));
    }
  } else {
    layer = attach_[static_cast<std::size_t>(last)];
    const auto& out_map = cache.trunk[static_cast<std::size_t>(layer - 1)].output;
    g = Tensor2(out_map.channels(), out_map.length());
  }

  for (; layer >= 1; --layer) {
    const auto it = std::find(attach_.begin(), attach_.end(), layer);
    if (it != attach_.end()) {
      const auto e = static_cast<std::size_t>(it - attach_.begin());
      if (static_cast<int>(e) < reached) {
        if (static_cast<int>(e) + 1 < reached) {
          // The map after this stage carries the late-input splice.
          const int cut = cache.splice_at[e];
          Tensor2 g_late = g.slice_time(cut, g.length());
          g = g.slice_time(0, cut);
          (void)backward_stage(late_[e], cache.late[e], g_late, grads);
        }
        const auto& gl = logit_grads[e];
        if (!gl.empty()) {
          const auto& head_out = cache.heads[e].output;
          auto flat = backward_dense_head(heads_[e].hidden, heads_[e].out, cache.head_dense[e], gl, grads);
          Tensor2 gh(head_out.channels(), head_out.length(), std::move(flat));
          Tensor2 g_in = backward_stage(heads_[e].stage, cache.heads[e], gh, grads);
          auto dst = g.values();
          auto src = g_in.values();
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
      }
    }
    g = backward_stage(trunk_[static_cast<std::size_t>(layer - 1)],
                       cache.trunk[static_cast<std::size_t>(layer - 1)], g, grads);
  }
}

}  // namespace see

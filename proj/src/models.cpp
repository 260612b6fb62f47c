#include "vocap/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "vocap/serialize.hpp"

namespace vocap {

const char* to_string(Architecture a) {
  switch (a) {
    case Architecture::compact_conv: return "compact_conv";
    case Architecture::raw_conv: return "raw_conv";
    case Architecture::mlp: return "mlp";
    case Architecture::gmm: return "gmm";
  }
  return "?";
}

Architecture architecture_from_string(const std::string& s) {
  if (s == "compact_conv") return Architecture::compact_conv;
  if (s == "raw_conv") return Architecture::raw_conv;
  if (s == "mlp") return Architecture::mlp;
  if (s == "gmm") return Architecture::gmm;
  throw std::invalid_argument("unknown architecture: " + s);
}

const char* to_string(LossKind k) {
  return k == LossKind::cross_entropy ? "cross_entropy" : "binary_focal";
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "cross_entropy") return LossKind::cross_entropy;
  if (s == "binary_focal") return LossKind::binary_focal;
  throw std::invalid_argument("unknown loss kind: " + s);
}

void ModelConfig::validate() const {
  if (class_count < 2) throw std::invalid_argument("class_count must be >= 2");
  frontend.validate();
  const bool raw_frontend = frontend.kind == FeatureKind::raw;
  switch (architecture) {
    case Architecture::raw_conv:
      if (!raw_frontend)
        throw std::invalid_argument("raw_conv requires the raw frontend");
      break;
    case Architecture::compact_conv:
    case Architecture::mlp:
      if (raw_frontend)
        throw std::invalid_argument(
            "compact_conv/mlp require a 2-D feature frontend");
      break;
    case Architecture::gmm:
      if (raw_frontend)
        throw std::invalid_argument("gmm requires a 2-D feature frontend");
      break;
  }
  if (architecture != Architecture::gmm && layer_widths.empty())
    throw std::invalid_argument("layer_widths must be non-empty");
  for (int w : layer_widths)
    if (w <= 0) throw std::invalid_argument("layer widths must be positive");
}

Prediction softmax_prediction(const Eigen::VectorXd& logits) {
  Prediction p;
  const double zmax = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - zmax).exp();
  p.probabilities = e / e.sum();
  p.probabilities.maxCoeff(&p.label);
  p.confidence = p.probabilities[p.label];
  return p;
}

double classification_loss(const Eigen::VectorXd& probabilities, int label,
                           LossKind kind, Eigen::VectorXd* grad_logits) {
  const int classes = static_cast<int>(probabilities.size());
  if (label < 0 || label >= classes)
    throw std::invalid_argument("label out of range");
  const double p = std::max(probabilities[label], 1e-300);
  double loss = 0.0, dldp = 0.0;
  switch (kind) {
    case LossKind::cross_entropy:
      loss = -std::log(p);
      break;
    case LossKind::binary_focal: {
      const double u = 1.0 - p;
      loss = -std::pow(u, kFocalGamma) * std::log(p);
      dldp = kFocalGamma * std::pow(u, kFocalGamma - 1.0) * std::log(p) -
             std::pow(u, kFocalGamma) / p;
      break;
    }
  }
  if (grad_logits) {
    grad_logits->resize(classes);
    if (kind == LossKind::cross_entropy) {
      *grad_logits = probabilities;
      (*grad_logits)[label] -= 1.0;
    } else {
      // dp_label/dz_j = p_label (delta_jl - p_j)
      for (int j = 0; j < classes; ++j)
        (*grad_logits)[j] =
            dldp * p * ((j == label ? 1.0 : 0.0) - probabilities[j]);
    }
  }
  return loss;
}

// ---- DifferentiableModel ----------------------------------------------------

struct DifferentiableModel::Activations {
  FeatureMatrix features;
  // compact_conv (2-D path): per block input / pre-relu conv output / pooled
  std::vector<std::vector<Eigen::MatrixXd>> block_in;
  std::vector<std::vector<Eigen::MatrixXd>> block_pre;
  std::vector<std::vector<Eigen::MatrixXd>> block_out;
  // raw_conv (1-D path): matrices are [length x channels]
  std::vector<Eigen::MatrixXd> raw_in;
  std::vector<Eigen::MatrixXd> raw_pre;
  std::vector<Eigen::Index> max_idx;  // argmax per channel of last layer
  // mlp
  std::vector<Eigen::VectorXd> mlp_pre;
  Eigen::VectorXd head_in;
};

namespace {

Eigen::VectorXd he_init(std::mt19937_64& rng, int count, int fan_in) {
  std::normal_distribution<double> d(0.0, std::sqrt(2.0 / fan_in));
  Eigen::VectorXd v(count);
  for (int i = 0; i < count; ++i) v[i] = d(rng);
  return v;
}

inline auto strided(int offset, int out_size, int stride) {
  return Eigen::seqN(Eigen::Index(offset), Eigen::Index(out_size),
                     Eigen::Index(stride));
}

int conv_out(int in, int k, int s) { return (in - k) / s + 1; }

}  // namespace

DifferentiableModel::DifferentiableModel(const ModelConfig& config)
    : config_(config), frontend_(config.frontend, config.sample_rate) {
  config_.validate();
  if (config_.architecture == Architecture::gmm)
    throw std::invalid_argument("gmm is not a gradient-trained architecture");

  std::mt19937_64 rng(config_.seed);
  std::vector<double> params;
  auto append = [&](const Eigen::VectorXd& v) {
    std::ptrdiff_t off = static_cast<std::ptrdiff_t>(params.size());
    params.insert(params.end(), v.data(), v.data() + v.size());
    return off;
  };
  auto append_zeros = [&](int count) {
    std::ptrdiff_t off = static_cast<std::ptrdiff_t>(params.size());
    params.insert(params.end(), count, 0.0);
    return off;
  };

  switch (config_.architecture) {
    case Architecture::compact_conv: {
      const int width = frontend_.coeff_count();
      const bool wide = width >= 256;  // spectrograms
      int in_ch = 1;
      for (std::size_t b = 0; b < config_.layer_widths.size(); ++b) {
        ConvShape cs;
        cs.in_ch = in_ch;
        cs.out_ch = config_.layer_widths[b];
        cs.kf = 3;
        cs.sf = 1;
        if (b == 0) {
          cs.kc = wide ? 9 : 3;
          cs.sc = wide ? 4 : 1;
        } else {
          cs.kc = 3;
          cs.sc = wide ? 2 : 1;
        }
        int wcount = cs.in_ch * cs.out_ch * cs.kf * cs.kc;
        cs.w_off = append(he_init(rng, wcount, cs.in_ch * cs.kf * cs.kc));
        cs.b_off = append_zeros(cs.out_ch);
        convs_.push_back(cs);
        in_ch = cs.out_ch;
      }
      head_.in = in_ch;
      head_.out = config_.class_count;
      head_.w_off = append_zeros(head_.in * head_.out);
      head_.b_off = append_zeros(head_.out);
      break;
    }
    case Architecture::raw_conv: {
      int in_ch = 1;
      for (std::size_t b = 0; b < config_.layer_widths.size(); ++b) {
        ConvShape cs;
        cs.in_ch = in_ch;
        cs.out_ch = config_.layer_widths[b];
        cs.kf = b == 0 ? 33 : 9;  // kernel along time
        cs.sf = b == 0 ? 16 : 4;
        cs.kc = 1;
        cs.sc = 1;
        int wcount = cs.in_ch * cs.out_ch * cs.kf;
        cs.w_off = append(he_init(rng, wcount, cs.in_ch * cs.kf));
        cs.b_off = append_zeros(cs.out_ch);
        convs_.push_back(cs);
        in_ch = cs.out_ch;
      }
      head_.in = 2 * in_ch;  // mean and max pooled
      head_.out = config_.class_count;
      head_.w_off = append_zeros(head_.in * head_.out);
      head_.b_off = append_zeros(head_.out);
      break;
    }
    case Architecture::mlp: {
      int in = frontend_.coeff_count();
      for (int width : config_.layer_widths) {
        LinearShape ls;
        ls.in = in;
        ls.out = width;
        ls.w_off = append(he_init(rng, in * width, in));
        ls.b_off = append_zeros(width);
        mlp_layers_.push_back(ls);
        in = width;
      }
      head_.in = in;
      head_.out = config_.class_count;
      head_.w_off = append_zeros(head_.in * head_.out);
      head_.b_off = append_zeros(head_.out);
      break;
    }
    case Architecture::gmm:
      break;
  }
  params_ = Eigen::Map<Eigen::VectorXd>(params.data(),
                                        static_cast<Eigen::Index>(params.size()));
}

Eigen::VectorXd DifferentiableModel::logits(const AudioBuffer& buffer,
                                            Activations* acts,
                                            FeatureTape* tape) const {
  Activations local;
  Activations& a = acts ? *acts : local;
  a.features = frontend_.forward(buffer, tape);
  const double* P = params_.data();

  switch (config_.architecture) {
    case Architecture::compact_conv: {
      std::vector<Eigen::MatrixXd> cur{a.features.values};
      for (const ConvShape& cs : convs_) {
        const int Fi = static_cast<int>(cur[0].rows());
        const int Ci = static_cast<int>(cur[0].cols());
        const int Fo = conv_out(Fi, cs.kf, cs.sf);
        const int Co = conv_out(Ci, cs.kc, cs.sc);
        if (Fo < 2 || Co < 1)
          throw std::invalid_argument("input too short for compact_conv");
        a.block_in.push_back(cur);
        std::vector<Eigen::MatrixXd> pre(cs.out_ch);
        for (int oc = 0; oc < cs.out_ch; ++oc)
          pre[oc] = Eigen::MatrixXd::Constant(Fo, Co, P[cs.b_off + oc]);
        for (int oc = 0; oc < cs.out_ch; ++oc)
          for (int ic = 0; ic < cs.in_ch; ++ic)
            for (int i = 0; i < cs.kf; ++i)
              for (int j = 0; j < cs.kc; ++j) {
                double w =
                    P[cs.w_off + ((oc * cs.in_ch + ic) * cs.kf + i) * cs.kc + j];
                pre[oc].noalias() +=
                    w * cur[ic](strided(i, Fo, cs.sf), strided(j, Co, cs.sc));
              }
        a.block_pre.push_back(pre);
        // relu then 2x2 average pool (valid)
        const int Fp = Fo / 2, Cp = std::max(1, Co / 2);
        if (Fp < 1)
          throw std::invalid_argument("input too short for compact_conv");
        std::vector<Eigen::MatrixXd> pooled(cs.out_ch);
        for (int oc = 0; oc < cs.out_ch; ++oc) {
          Eigen::MatrixXd r = pre[oc].array().max(0.0);
          if (Co == 1) {
            pooled[oc].resize(Fp, 1);
            for (int i = 0; i < Fp; ++i)
              pooled[oc](i, 0) = 0.5 * (r(2 * i, 0) + r(2 * i + 1, 0));
          } else {
            pooled[oc].resize(Fp, Cp);
            for (int i = 0; i < Fp; ++i)
              for (int j = 0; j < Cp; ++j)
                pooled[oc](i, j) =
                    0.25 * (r(2 * i, 2 * j) + r(2 * i + 1, 2 * j) +
                            r(2 * i, 2 * j + 1) + r(2 * i + 1, 2 * j + 1));
          }
        }
        a.block_out.push_back(pooled);
        cur = pooled;
      }
      a.head_in.resize(head_.in);
      for (int c = 0; c < head_.in; ++c) a.head_in[c] = cur[c].mean();
      break;
    }
    case Architecture::raw_conv: {
      Eigen::MatrixXd cur = a.features.values.row(0).transpose();  // [N x 1]
      for (const ConvShape& cs : convs_) {
        const int Li = static_cast<int>(cur.rows());
        const int Lo = conv_out(Li, cs.kf, cs.sf);
        if (Lo < 1)
          throw std::invalid_argument("input too short for raw_conv");
        a.raw_in.push_back(cur);
        Eigen::MatrixXd pre(Lo, cs.out_ch);
        for (int oc = 0; oc < cs.out_ch; ++oc) {
          pre.col(oc).setConstant(P[cs.b_off + oc]);
          for (int ic = 0; ic < cs.in_ch; ++ic)
            for (int k = 0; k < cs.kf; ++k) {
              double w = P[cs.w_off + (oc * cs.in_ch + ic) * cs.kf + k];
              pre.col(oc).noalias() +=
                  w * cur(strided(k, Lo, cs.sf), ic);
            }
        }
        a.raw_pre.push_back(pre);
        cur = pre.array().max(0.0);
      }
      const int ch = static_cast<int>(cur.cols());
      a.head_in.resize(2 * ch);
      a.max_idx.assign(ch, 0);
      for (int c = 0; c < ch; ++c) {
        a.head_in[c] = cur.col(c).mean();
        a.head_in[ch + c] = cur.col(c).maxCoeff(&a.max_idx[c]);
      }
      break;
    }
    case Architecture::mlp: {
      Eigen::VectorXd v = a.features.values.colwise().mean().transpose();
      for (const LinearShape& ls : mlp_layers_) {
        Eigen::Map<const Eigen::MatrixXd> W(P + ls.w_off, ls.out, ls.in);
        Eigen::Map<const Eigen::VectorXd> b(P + ls.b_off, ls.out);
        Eigen::VectorXd pre = W * v + b;
        a.mlp_pre.push_back(pre);
        v = pre.array().max(0.0);
      }
      a.head_in = v;
      break;
    }
    case Architecture::gmm:
      break;
  }

  Eigen::Map<const Eigen::MatrixXd> W(P + head_.w_off, head_.out, head_.in);
  Eigen::Map<const Eigen::VectorXd> b(P + head_.b_off, head_.out);
  return W * a.head_in + b;
}

void DifferentiableModel::backward(const Activations& a,
                                   const Eigen::VectorXd& grad_logits,
                                   Eigen::VectorXd* param_grad,
                                   Eigen::MatrixXd* feature_grad) const {
  const double* P = params_.data();
  double* G = param_grad ? param_grad->data() : nullptr;

  // Head: logits = W * head_in + b.
  Eigen::Map<const Eigen::MatrixXd> Wh(P + head_.w_off, head_.out, head_.in);
  if (G) {
    Eigen::Map<Eigen::MatrixXd> gW(G + head_.w_off, head_.out, head_.in);
    gW.noalias() += grad_logits * a.head_in.transpose();
    Eigen::Map<Eigen::VectorXd> gb(G + head_.b_off, head_.out);
    gb += grad_logits;
  }
  Eigen::VectorXd g_head = Wh.transpose() * grad_logits;

  switch (config_.architecture) {
    case Architecture::compact_conv: {
      const int blocks = static_cast<int>(convs_.size());
      // gradient over the pooled output of the last block (mean pooling)
      const auto& last = a.block_out.back();
      std::vector<Eigen::MatrixXd> gout(last.size());
      for (std::size_t c = 0; c < last.size(); ++c)
        gout[c] = Eigen::MatrixXd::Constant(
            last[c].rows(), last[c].cols(),
            g_head[static_cast<int>(c)] / double(last[c].size()));

      for (int bidx = blocks - 1; bidx >= 0; --bidx) {
        const ConvShape& cs = convs_[bidx];
        const auto& pre = a.block_pre[bidx];
        const auto& in = a.block_in[bidx];
        const int Fo = static_cast<int>(pre[0].rows());
        const int Co = static_cast<int>(pre[0].cols());
        // un-pool (2x2 average) then relu mask
        std::vector<Eigen::MatrixXd> gpre(cs.out_ch);
        for (int oc = 0; oc < cs.out_ch; ++oc) {
          gpre[oc] = Eigen::MatrixXd::Zero(Fo, Co);
          const int Fp = static_cast<int>(gout[oc].rows());
          const int Cp = static_cast<int>(gout[oc].cols());
          if (Co == 1) {
            for (int i = 0; i < Fp; ++i) {
              gpre[oc](2 * i, 0) += 0.5 * gout[oc](i, 0);
              gpre[oc](2 * i + 1, 0) += 0.5 * gout[oc](i, 0);
            }
          } else {
            for (int i = 0; i < Fp; ++i)
              for (int j = 0; j < Cp; ++j) {
                const double q = 0.25 * gout[oc](i, j);
                gpre[oc](2 * i, 2 * j) += q;
                gpre[oc](2 * i + 1, 2 * j) += q;
                gpre[oc](2 * i, 2 * j + 1) += q;
                gpre[oc](2 * i + 1, 2 * j + 1) += q;
              }
          }
          gpre[oc] =
              (pre[oc].array() > 0.0).select(gpre[oc].array(), 0.0).matrix();
        }
        // conv backward
        const int Fi = static_cast<int>(in[0].rows());
        const int Ci = static_cast<int>(in[0].cols());
        std::vector<Eigen::MatrixXd> gin(cs.in_ch,
                                         Eigen::MatrixXd::Zero(Fi, Ci));
        for (int oc = 0; oc < cs.out_ch; ++oc) {
          if (G) G[cs.b_off + oc] += gpre[oc].sum();
          for (int ic = 0; ic < cs.in_ch; ++ic)
            for (int i = 0; i < cs.kf; ++i)
              for (int j = 0; j < cs.kc; ++j) {
                const std::ptrdiff_t widx =
                    cs.w_off + ((oc * cs.in_ch + ic) * cs.kf + i) * cs.kc + j;
                auto patch =
                    in[ic](strided(i, Fo, cs.sf), strided(j, Co, cs.sc));
                if (G)
                  G[widx] += (gpre[oc].array() * patch.array()).sum();
                gin[ic](strided(i, Fo, cs.sf), strided(j, Co, cs.sc)) +=
                    P[widx] * gpre[oc];
              }
        }
        gout = std::move(gin);
      }
      if (feature_grad) *feature_grad = gout[0];
      break;
    }
    case Architecture::raw_conv: {
      const int blocks = static_cast<int>(convs_.size());
      const Eigen::MatrixXd& last_pre = a.raw_pre.back();
      const int ch = static_cast<int>(last_pre.cols());
      const int Lo = static_cast<int>(last_pre.rows());
      Eigen::MatrixXd gout = Eigen::MatrixXd::Zero(Lo, ch);
      for (int c = 0; c < ch; ++c) {
        gout.col(c).setConstant(g_head[c] / double(Lo));  // mean branch
        gout(a.max_idx[c], c) += g_head[ch + c];          // max branch
      }
      for (int bidx = blocks - 1; bidx >= 0; --bidx) {
        const ConvShape& cs = convs_[bidx];
        const Eigen::MatrixXd& pre = a.raw_pre[bidx];
        const Eigen::MatrixXd& in = a.raw_in[bidx];
        Eigen::MatrixXd gpre =
            (pre.array() > 0.0).select(gout.array(), 0.0).matrix();
        const int Li = static_cast<int>(in.rows());
        const int L = static_cast<int>(pre.rows());
        Eigen::MatrixXd gin = Eigen::MatrixXd::Zero(Li, cs.in_ch);
        for (int oc = 0; oc < cs.out_ch; ++oc) {
          if (G) G[cs.b_off + oc] += gpre.col(oc).sum();
          for (int ic = 0; ic < cs.in_ch; ++ic)
            for (int k = 0; k < cs.kf; ++k) {
              const std::ptrdiff_t widx =
                  cs.w_off + (oc * cs.in_ch + ic) * cs.kf + k;
              auto patch = in(strided(k, L, cs.sf), ic);
              if (G)
                G[widx] += (gpre.col(oc).array() * patch.array()).sum();
              gin(strided(k, L, cs.sf), ic) += P[widx] * gpre.col(oc);
            }
        }
        gout = std::move(gin);
      }
      if (feature_grad) *feature_grad = gout.col(0).transpose();
      break;
    }
    case Architecture::mlp: {
      Eigen::VectorXd g = g_head;
      for (int li = static_cast<int>(mlp_layers_.size()) - 1; li >= 0; --li) {
        const LinearShape& ls = mlp_layers_[li];
        const Eigen::VectorXd& pre = a.mlp_pre[li];
        Eigen::VectorXd gpre =
            (pre.array() > 0.0).select(g.array(), 0.0).matrix();
        Eigen::VectorXd input =
            li == 0
                ? Eigen::VectorXd(a.features.values.colwise().mean().transpose())
                : Eigen::VectorXd(a.mlp_pre[li - 1].array().max(0.0));
        if (G) {
          Eigen::Map<Eigen::MatrixXd> gW(G + ls.w_off, ls.out, ls.in);
          gW.noalias() += gpre * input.transpose();
          Eigen::Map<Eigen::VectorXd> gb(G + ls.b_off, ls.out);
          gb += gpre;
        }
        Eigen::Map<const Eigen::MatrixXd> W(P + ls.w_off, ls.out, ls.in);
        g = W.transpose() * gpre;
      }
      if (feature_grad) {
        const int F = static_cast<int>(a.features.values.rows());
        feature_grad->resize(F, g.size());
        for (int t = 0; t < F; ++t)
          feature_grad->row(t) = g.transpose() / double(F);
      }
      break;
    }
    case Architecture::gmm:
      break;
  }
}

Prediction DifferentiableModel::forward(const AudioBuffer& buffer) const {
  return softmax_prediction(logits(buffer, nullptr, nullptr));
}

double DifferentiableModel::loss(const AudioBuffer& buffer, int label,
                                 LossKind kind) const {
  Prediction p = forward(buffer);
  return classification_loss(p.probabilities, label, kind, nullptr);
}

Eigen::VectorXd DifferentiableModel::input_gradient(const AudioBuffer& buffer,
                                                    int label, LossKind kind,
                                                    double* loss_out,
                                                    Prediction* pred_out) const {
  Activations acts;
  FeatureTape tape;
  Eigen::VectorXd z = logits(buffer, &acts, &tape);
  Prediction p = softmax_prediction(z);
  Eigen::VectorXd gz;
  double L = classification_loss(p.probabilities, label, kind, &gz);
  if (loss_out) *loss_out = L;
  if (pred_out) *pred_out = p;
  Eigen::MatrixXd gfeat;
  backward(acts, gz, nullptr, &gfeat);
  return frontend_.backward(tape, gfeat);
}

double DifferentiableModel::loss_and_param_gradient(const AudioBuffer& buffer,
                                                    int label, LossKind kind,
                                                    Eigen::VectorXd& grad,
                                                    int* predicted) const {
  Activations acts;
  Eigen::VectorXd z = logits(buffer, &acts, nullptr);
  Prediction p = softmax_prediction(z);
  if (predicted) *predicted = p.label;
  Eigen::VectorXd gz;
  double L = classification_loss(p.probabilities, label, kind, &gz);
  backward(acts, gz, &grad, nullptr);
  return L;
}

// ---- Training ----------------------------------------------------------------

ConfusionCounts evaluate(const Classifier& model, const Dataset& set) {
  ConfusionCounts c;
  for (const auto& s : set) c.add(model.forward(s.audio).label, s.label);
  return c;
}

Dataset undersample_balanced(const Dataset& set, std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < set.size(); ++i)
    (set[i].label == 1 ? pos : neg).push_back(i);
  auto& majority = pos.size() > neg.size() ? pos : neg;
  const std::size_t keep = std::min(pos.size(), neg.size());
  std::mt19937_64 rng(seed);
  std::shuffle(majority.begin(), majority.end(), rng);
  majority.resize(keep);
  std::vector<std::size_t> idx;
  idx.insert(idx.end(), pos.begin(), pos.end());
  idx.insert(idx.end(), neg.begin(), neg.end());
  std::sort(idx.begin(), idx.end());
  Dataset out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(set[i]);
  return out;
}

TrainHistory train(DifferentiableModel& model, const Dataset& train_set,
                   const Dataset& val_set, const TrainConfig& config) {
  if (train_set.empty()) throw std::invalid_argument("empty training set");
  bool has0 = false, has1 = false;
  for (const auto& s : train_set) (s.label == 1 ? has1 : has0) = true;
  if (!has0 || !has1)
    throw std::invalid_argument("training set must contain both classes");

  const Eigen::Index n_params =
      static_cast<Eigen::Index>(model.parameter_count());
  Eigen::VectorXd m = Eigen::VectorXd::Zero(n_params);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n_params);
  Eigen::VectorXd grad(n_params);
  long step = 0;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(config.seed);

  TrainHistory hist;
  Eigen::VectorXd best_params = model.parameters();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    ConfusionCounts train_cm;
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += config.batch_size) {
      const std::size_t stop =
          std::min(order.size(), start + config.batch_size);
      grad.setZero();
      for (std::size_t i = start; i < stop; ++i) {
        const auto& s = train_set[order[i]];
        int predicted = 0;
        loss_sum += model.loss_and_param_gradient(s.audio, s.label, config.loss,
                                                  grad, &predicted);
        train_cm.add(predicted, s.label);
        ++seen;
      }
      grad /= static_cast<double>(stop - start);
      ++step;
      m = config.adam_beta1 * m + (1.0 - config.adam_beta1) * grad;
      v = config.adam_beta2 * v +
          (1.0 - config.adam_beta2) * grad.cwiseProduct(grad);
      const double bc1 = 1.0 - std::pow(config.adam_beta1, step);
      const double bc2 = 1.0 - std::pow(config.adam_beta2, step);
      model.parameters().array() -=
          config.learning_rate * (m.array() / bc1) /
          ((v.array() / bc2).sqrt() + config.adam_eps);
    }
    EpochMetrics em;
    em.train_loss = loss_sum / static_cast<double>(seen);
    em.train_f1 = f1_score(train_cm).f1;
    em.val_f1 = val_set.empty() ? 0.0 : f1_score(evaluate(model, val_set)).f1;
    hist.epochs.push_back(em);
    if (hist.best_epoch < 0 || em.val_f1 > hist.best_val_f1) {
      hist.best_epoch = epoch;
      hist.best_val_f1 = em.val_f1;
      best_params = model.parameters();
    }
  }
  model.parameters() = best_params;
  return hist;
}

// ---- GMM ---------------------------------------------------------------------

GmmModel::GmmModel(const ModelConfig& config, const GmmConfig& gmm)
    : config_(config), gmm_(gmm), frontend_(config.frontend, config.sample_rate) {
  config_.validate();
  if (config_.architecture != Architecture::gmm)
    throw std::invalid_argument("GmmModel requires the gmm architecture");
  mixtures_.resize(config_.class_count);
}

namespace {

// Total log-likelihood and (optionally) responsibilities of a diagonal GMM.
double gmm_loglik(const Eigen::MatrixXd& X, const GmmModel::Mixture& mix,
                  Eigen::MatrixXd* resp) {
  const int T = static_cast<int>(X.rows());
  const int K = static_cast<int>(mix.weights.size());
  const int D = static_cast<int>(X.cols());
  Eigen::MatrixXd logp(T, K);
  for (int k = 0; k < K; ++k) {
    double base = std::log(std::max(mix.weights[k], 1e-300));
    double logdet = 0.0;
    for (int d = 0; d < D; ++d)
      logdet += std::log(2.0 * M_PI * mix.vars(k, d));
    base -= 0.5 * logdet;
    Eigen::MatrixXd diff = X.rowwise() - mix.means.row(k);
    Eigen::VectorXd quad =
        0.5 * (diff.array().square().matrix() *
               mix.vars.row(k).cwiseInverse().transpose());
    logp.col(k) = Eigen::VectorXd::Constant(T, base) - quad;
  }
  double total = 0.0;
  if (resp) resp->resize(T, K);
  for (int t = 0; t < T; ++t) {
    double mx = logp.row(t).maxCoeff();
    double lse = mx + std::log((logp.row(t).array() - mx).exp().sum());
    total += lse;
    if (resp) resp->row(t) = (logp.row(t).array() - lse).exp();
  }
  return total;
}

}  // namespace

std::vector<std::vector<double>> GmmModel::fit(
    const std::vector<Eigen::MatrixXd>& features_per_class) {
  if (static_cast<int>(features_per_class.size()) != config_.class_count)
    throw std::invalid_argument("one feature matrix per class required");
  const int K = gmm_.components;
  std::vector<std::vector<double>> loglik(features_per_class.size());
  std::mt19937_64 rng(gmm_.seed);

  for (std::size_t c = 0; c < features_per_class.size(); ++c) {
    const Eigen::MatrixXd& X = features_per_class[c];
    const int T = static_cast<int>(X.rows());
    const int D = static_cast<int>(X.cols());
    if (T < K * 10)
      throw std::invalid_argument(
          "insufficient frames to fit gmm: need >= " + std::to_string(K * 10) +
          ", got " + std::to_string(T));

    // k-means init
    std::vector<int> pick(T);
    std::iota(pick.begin(), pick.end(), 0);
    std::shuffle(pick.begin(), pick.end(), rng);
    Eigen::MatrixXd centers(K, D);
    for (int k = 0; k < K; ++k) centers.row(k) = X.row(pick[k]);
    std::vector<int> assign(T, 0);
    for (int it = 0; it < gmm_.kmeans_iters; ++it) {
      for (int t = 0; t < T; ++t) {
        double best = std::numeric_limits<double>::max();
        for (int k = 0; k < K; ++k) {
          double d2 = (X.row(t) - centers.row(k)).squaredNorm();
          if (d2 < best) {
            best = d2;
            assign[t] = k;
          }
        }
      }
      for (int k = 0; k < K; ++k) {
        Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(D);
        int n = 0;
        for (int t = 0; t < T; ++t)
          if (assign[t] == k) {
            sum += X.row(t);
            ++n;
          }
        if (n > 0) centers.row(k) = sum / n;
        else centers.row(k) = X.row(pick[(k * 7919) % T]);  // reseed empties
      }
    }

    Mixture mix;
    mix.weights.resize(K);
    mix.means = centers;
    mix.vars.resize(K, D);
    Eigen::RowVectorXd gmean = X.colwise().mean();
    Eigen::RowVectorXd gvar =
        ((X.rowwise() - gmean).array().square().colwise().sum() / T).matrix();
    for (int k = 0; k < K; ++k) {
      Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(D);
      int n = 0;
      for (int t = 0; t < T; ++t)
        if (assign[t] == k) {
          sum += (X.row(t) - centers.row(k)).array().square().matrix();
          ++n;
        }
      mix.weights[k] = std::max(1e-8, static_cast<double>(n) / T);
      mix.vars.row(k) = (n > 1 ? (sum / n).eval() : gvar)
                            .array()
                            .max(gmm_.covariance_floor);
    }
    mix.weights /= mix.weights.sum();

    // EM
    loglik[c].push_back(gmm_loglik(X, mix, nullptr));
    for (int it = 0; it < gmm_.em_iters; ++it) {
      Eigen::MatrixXd resp;
      gmm_loglik(X, mix, &resp);
      Eigen::VectorXd nk = resp.colwise().sum();
      for (int k = 0; k < K; ++k) {
        double n = std::max(nk[k], 1e-10);
        mix.weights[k] = n / T;
        mix.means.row(k) = (resp.col(k).transpose() * X) / n;
        Eigen::RowVectorXd sq =
            (resp.col(k).transpose() *
             (X.rowwise() - mix.means.row(k)).array().square().matrix()) /
            n;
        mix.vars.row(k) = sq.array().max(gmm_.covariance_floor);
      }
      mix.weights /= mix.weights.sum();
      loglik[c].push_back(gmm_loglik(X, mix, nullptr));
    }
    mixtures_[c] = std::move(mix);
  }
  fitted_ = true;
  return loglik;
}

Eigen::VectorXd GmmModel::class_log_likelihoods(
    const Eigen::MatrixXd& features) const {
  if (!fitted_) throw std::runtime_error("gmm not fitted");
  Eigen::VectorXd ll(config_.class_count);
  for (int c = 0; c < config_.class_count; ++c)
    ll[c] = gmm_loglik(features, mixtures_[c], nullptr) / features.rows();
  return ll;
}

Prediction GmmModel::predict_features(const Eigen::MatrixXd& features) const {
  return softmax_prediction(class_log_likelihoods(features));
}

Prediction GmmModel::forward(const AudioBuffer& buffer) const {
  return predict_features(frontend_.forward(buffer).values);
}

double GmmModel::loss(const AudioBuffer& buffer, int label,
                      LossKind kind) const {
  Prediction p = forward(buffer);
  return classification_loss(p.probabilities, label, kind, nullptr);
}

Eigen::VectorXd GmmModel::input_gradient(const AudioBuffer& buffer, int label,
                                         LossKind kind, double* loss_out,
                                         Prediction* pred_out) const {
  FeatureTape tape;
  FeatureMatrix feat = frontend_.forward(buffer, &tape);
  const Eigen::MatrixXd& X = feat.values;
  const int T = static_cast<int>(X.rows());
  const int D = static_cast<int>(X.cols());

  Eigen::VectorXd ll = class_log_likelihoods(X);
  Prediction p = softmax_prediction(ll);
  Eigen::VectorXd gz;
  double L = classification_loss(p.probabilities, label, kind, &gz);
  if (loss_out) *loss_out = L;
  if (pred_out) *pred_out = p;

  Eigen::MatrixXd gfeat = Eigen::MatrixXd::Zero(T, D);
  for (int c = 0; c < config_.class_count; ++c) {
    if (gz[c] == 0.0) continue;
    Eigen::MatrixXd resp;
    gmm_loglik(X, mixtures_[c], &resp);
    const Mixture& mix = mixtures_[c];
    // d avg-loglik / dX = (1/T) sum_k resp_k * (mu_k - x)/var_k
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(T, D);
    for (int k = 0; k < static_cast<int>(mix.weights.size()); ++k) {
      Eigen::MatrixXd diff = (-X).rowwise() + mix.means.row(k);  // mu - x
      diff = diff * mix.vars.row(k).cwiseInverse().asDiagonal();
      g += resp.col(k).asDiagonal() * diff;
    }
    gfeat += (gz[c] / T) * g;
  }
  return frontend_.backward(tape, gfeat);
}

// ---- Checkpoints ----------------------------------------------------------------

namespace {

void write_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(is.get()))
         << (8 * i);
  return v;
}
void write_doubles(std::ostream& os, const double* p, std::size_t n) {
  os.write(reinterpret_cast<const char*>(p),
           static_cast<std::streamsize>(n * sizeof(double)));
}
void read_doubles(std::istream& is, double* p, std::size_t n) {
  is.read(reinterpret_cast<char*>(p),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw std::runtime_error("truncated checkpoint payload");
}

constexpr char kMagic[4] = {'V', 'C', 'K', 'P'};
constexpr std::uint64_t kVersion = 1;

}  // namespace

std::string model_config_to_json(const ModelConfig& config,
                                 const GmmConfig* gmm) {
  nlohmann::json j;
  j["model"] = config;
  if (gmm) j["gmm"] = *gmm;
  return j.dump();
}

void save_checkpoint(const Classifier& model, const std::string& path,
                     const std::string& manifest_json) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for write: " + path);
  os.write(kMagic, 4);
  write_u64(os, kVersion);

  const auto* nn = dynamic_cast<const DifferentiableModel*>(&model);
  const auto* gm = dynamic_cast<const GmmModel*>(&model);
  write_u64(os, nn ? 0 : 1);

  std::string header =
      model_config_to_json(model.config(), gm ? &gm->gmm_config() : nullptr);
  write_u64(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));

  if (nn) {
    write_u64(os, nn->parameter_count());
    write_doubles(os, nn->parameters().data(), nn->parameter_count());
  } else if (gm) {
    if (!gm->fitted()) throw std::runtime_error("cannot save unfitted gmm");
    write_u64(os, gm->mixtures().size());
    for (const auto& mix : gm->mixtures()) {
      const std::uint64_t K = mix.weights.size(), D = mix.means.cols();
      write_u64(os, K);
      write_u64(os, D);
      write_doubles(os, mix.weights.data(), K);
      write_doubles(os, mix.means.data(), K * D);
      write_doubles(os, mix.vars.data(), K * D);
    }
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);

  std::ofstream mf(path + ".json", std::ios::trunc);
  mf << manifest_json << "\n";
}

std::unique_ptr<Classifier> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("missing checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path);
  if (read_u64(is) != kVersion)
    throw std::runtime_error("unsupported checkpoint version: " + path);
  const std::uint64_t kind = read_u64(is);
  const std::uint64_t hlen = read_u64(is);
  std::string header(hlen, '\0');
  is.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw std::runtime_error("truncated checkpoint header: " + path);
  nlohmann::json j = nlohmann::json::parse(header);
  ModelConfig config = j.at("model").get<ModelConfig>();

  if (kind == 0) {
    auto model = std::make_unique<DifferentiableModel>(config);
    const std::uint64_t count = read_u64(is);
    if (count != model->parameter_count())
      throw std::runtime_error("checkpoint parameter count mismatch: " + path);
    read_doubles(is, model->parameters().data(), count);
    return model;
  }
  GmmConfig gmm = j.value("gmm", GmmConfig{});
  auto model = std::make_unique<GmmModel>(config, gmm);
  const std::uint64_t classes = read_u64(is);
  if (classes != model->mixtures().size())
    throw std::runtime_error("checkpoint class count mismatch: " + path);
  for (auto& mix : model->mixtures()) {
    const std::uint64_t K = read_u64(is), D = read_u64(is);
    mix.weights.resize(static_cast<Eigen::Index>(K));
    mix.means.resize(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(D));
    mix.vars.resize(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(D));
    read_doubles(is, mix.weights.data(), K);
    read_doubles(is, mix.means.data(), K * D);
    read_doubles(is, mix.vars.data(), K * D);
  }
  model->mark_fitted();
  return model;
}

}  // namespace vocap

#pragma once

// Packs a full model input sequence. Fixed order:
//   [command] [ego] [action x N_tau] [history frames] [future rgb]
//   [future depth] [traj query]
// Action slots are always laid out; without action conditioning they carry
// the PAD token so the position geometry is identical across stages. Ego and
// action values ride along as continuous side channels that the model embeds.

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "microdrive/render.hpp"
#include "microdrive/rng.hpp"
#include "microdrive/scene.hpp"
#include "microdrive/vocab.hpp"

namespace microdrive {

enum class PosKind : uint8_t {
  kText = 0,
  kEgo = 1,
  kAction = 2,
  kHistImage = 3,
  kFutRgb = 4,
  kFutDepth = 5,
  kTrajQuery = 6,
};

inline constexpr int kHistoryFrames = 2;  // T + 1 with T = 1
inline constexpr int kEgoFeatDim = 6;     // speed, heading rate, command one-hot

struct SeqLayout {
  int text_pos = 0;
  int ego_pos = 1;
  int action_begin = 2;
  int n_action = kNumWaypoints;
  int hist_begin = 0;
  int frame_len = 0;  // M + n_rays
  int n_hist = kHistoryFrames;
  int fut_rgb_begin = 0;
  int fut_depth_begin = 0;
  int traj_pos = 0;
  int total = 0;
  int m_tokens = 0;  // M
  int n_rays = 0;

  static SeqLayout make(const RenderParams& rp) {
    SeqLayout L;
    L.m_tokens = rp.tokens_per_frame();
    L.n_rays = rp.n_rays;
    L.frame_len = L.m_tokens + L.n_rays;
    L.hist_begin = L.action_begin + L.n_action;
    L.fut_rgb_begin = L.hist_begin + L.n_hist * L.frame_len;
    L.fut_depth_begin = L.fut_rgb_begin + L.m_tokens;
    L.traj_pos = L.fut_depth_begin + L.n_rays;
    L.total = L.traj_pos + 1;
    return L;
  }
  int future_len() const { return frame_len; }
  bool operator==(const SeqLayout&) const = default;
};

struct PackedSequence {
  SeqLayout layout;
  std::vector<int> tokens;              // vocab ids; MASK at masked positions
  std::vector<PosKind> kinds;           // partition of the sequence
  std::vector<int> block;               // image block id, -1 elsewhere
  std::vector<int> masked_positions;    // sorted, subset of future positions
  std::vector<std::pair<int, int>> targets;  // (position, target id); covers masked set
  std::array<double, kEgoFeatDim> ego_features{};
  bool has_action = false;
  Trajectory action;
};

// Ego side-channel features: speed, heading rate and the command one-hot.
inline std::array<double, kEgoFeatDim> make_ego_features(double speed, double heading_rate,
                                                         int command) {
  std::array<double, kEgoFeatDim> f{};
  f[0] = speed;
  f[1] = heading_rate;
  if (command < 0 || command >= kNumCommands) throw std::out_of_range("bad command id");
  f[2 + command] = 1.0;
  return f;
}

// `future` may be null (inference): all future positions are masked and the
// target map stays empty. Otherwise a uniformly random subset of
// round(mask_ratio * (M + n_rays)) future positions is masked and recorded.
inline PackedSequence pack_sequence(int command, const std::array<double, kEgoFeatDim>& ego_feats,
                                    const std::vector<TokenFrame>& history,
                                    const std::optional<Trajectory>& action,
                                    const TokenFrame* future, double mask_ratio,
                                    const VocabLayout& vocab, const SeqLayout& layout, Rng& rng) {
  if (mask_ratio < 0.0 || mask_ratio > 1.0)
    throw std::invalid_argument("pack_sequence: mask_ratio outside [0,1]");
  if (static_cast<int>(history.size()) != layout.n_hist)
    throw std::invalid_argument("pack_sequence: wrong history length");

  PackedSequence ps;
  ps.layout = layout;
  ps.tokens.assign(layout.total, vocab.pad_id());
  ps.kinds.assign(layout.total, PosKind::kText);
  ps.block.assign(layout.total, -1);
  ps.ego_features = ego_feats;

  ps.tokens[layout.text_pos] = vocab.encode_command(command);
  ps.kinds[layout.text_pos] = PosKind::kText;
  ps.kinds[layout.ego_pos] = PosKind::kEgo;
  for (int i = 0; i < layout.n_action; ++i) ps.kinds[layout.action_begin + i] = PosKind::kAction;
  if (action) {
    ps.has_action = true;
    ps.action = *action;
  }

  for (int f = 0; f < layout.n_hist; ++f) {
    const TokenFrame& fr = history[f];
    if (static_cast<int>(fr.rgb_tokens.size()) != layout.m_tokens ||
        static_cast<int>(fr.depth_tokens.size()) != layout.n_rays)
      throw std::invalid_argument("pack_sequence: history frame size mismatch");
    const int base = layout.hist_begin + f * layout.frame_len;
    for (int i = 0; i < layout.m_tokens; ++i) {
      ps.tokens[base + i] = fr.rgb_tokens[i];
      ps.kinds[base + i] = PosKind::kHistImage;
      ps.block[base + i] = f;
    }
    for (int i = 0; i < layout.n_rays; ++i) {
      ps.tokens[base + layout.m_tokens + i] = fr.depth_tokens[i];
      ps.kinds[base + layout.m_tokens + i] = PosKind::kHistImage;
      ps.block[base + layout.m_tokens + i] = f;
    }
  }

  const int rgb_block = layout.n_hist;
  const int depth_block = layout.n_hist + 1;
  for (int i = 0; i < layout.m_tokens; ++i) {
    ps.kinds[layout.fut_rgb_begin + i] = PosKind::kFutRgb;
    ps.block[layout.fut_rgb_begin + i] = rgb_block;
  }
  for (int i = 0; i < layout.n_rays; ++i) {
    ps.kinds[layout.fut_depth_begin + i] = PosKind::kFutDepth;
    ps.block[layout.fut_depth_begin + i] = depth_block;
  }
  ps.kinds[layout.traj_pos] = PosKind::kTrajQuery;
  ps.tokens[layout.traj_pos] = vocab.traj_id();

  const int fut_len = layout.future_len();
  if (future == nullptr) {
    for (int i = 0; i < fut_len; ++i) {
      ps.tokens[layout.fut_rgb_begin + i] = vocab.mask_id();
      ps.masked_positions.push_back(layout.fut_rgb_begin + i);
    }
    return ps;
  }

  if (static_cast<int>(future->rgb_tokens.size()) != layout.m_tokens ||
      static_cast<int>(future->depth_tokens.size()) != layout.n_rays)
    throw std::invalid_argument("pack_sequence: future frame size mismatch");
  for (int i = 0; i < layout.m_tokens; ++i)
    ps.tokens[layout.fut_rgb_begin + i] = future->rgb_tokens[i];
  for (int i = 0; i < layout.n_rays; ++i)
    ps.tokens[layout.fut_depth_begin + i] = future->depth_tokens[i];

  const int k = static_cast<int>(std::llround(mask_ratio * fut_len));
  std::vector<int> chosen = rng.choose_k(fut_len, k);
  std::sort(chosen.begin(), chosen.end());
  for (int idx : chosen) {
    const int pos = layout.fut_rgb_begin + idx;
    ps.targets.emplace_back(pos, ps.tokens[pos]);
    ps.tokens[pos] = vocab.mask_id();
    ps.masked_positions.push_back(pos);
  }
  return ps;
}

}  // namespace microdrive

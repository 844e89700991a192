#include "tokrl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <thread>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "tokrl/checkpoint.hpp"
#include "tokrl/optimizer.hpp"
#include "tokrl/rng.hpp"
#include "tokrl/rollout.hpp"

namespace tokrl {

std::string to_string(Algo a) {
  switch (a) {
    case Algo::POAD: return "poad";
    case Algo::NTPO: return "ntpo";
    case Algo::ActionPPO: return "action_ppo";
  }
  return "?";
}

Algo parse_algo(std::string_view text) {
  if (text == "poad") return Algo::POAD;
  if (text == "ntpo") return Algo::NTPO;
  if (text == "action_ppo") return Algo::ActionPPO;
  throw ConfigError(fmt::format("unknown algorithm '{}' (poad, ntpo, action_ppo)", text));
}

void TrainConfig::validate() const {
  if (!(gamma_a > 0.0 && gamma_a <= 1.0)) throw ConfigError("gamma_a must lie in (0, 1]");
  if (algo == Algo::NTPO) {
    if (!gamma_w) throw ConfigError("NTPO needs an explicit gamma_w");
    if (!(*gamma_w >= 0.0 && *gamma_w <= 1.0)) throw ConfigError("gamma_w must lie in [0, 1]");
  } else if (gamma_w && *gamma_w != 1.0) {
    throw ConfigError(fmt::format("{} uses gamma_w = 1; got {}", to_string(algo), *gamma_w));
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw ConfigError("learning rates must be > 0");
  if (ppo_epochs == 0) throw ConfigError("ppo_epochs must be >= 1");
  if (num_mini_batch == 0 || batch_size == 0) throw ConfigError("batch sizes must be >= 1");
  if (batch_size % num_mini_batch != 0) {
    throw ConfigError(fmt::format("batch_size {} is not divisible by num_mini_batch {}", batch_size,
                                  num_mini_batch));
  }
  if (rollout_threads == 0 || rollout_threads > batch_size) {
    throw ConfigError("rollout_threads must lie in [1, batch_size]");
  }
  if (!(clip > 0.0)) throw ConfigError("clip must be > 0");
  if (!(value_coef > 0.0)) throw ConfigError("value_coef must be > 0");
  if (!(entropy_coef >= 0.0)) throw ConfigError("entropy_coef must be >= 0");
  if (!(kl_threshold >= 0.0)) throw ConfigError("kl_threshold must be >= 0");
  if (total_env_steps < batch_size) throw ConfigError("total_env_steps must be >= batch_size");
  if (hidden == 0) throw ConfigError("hidden must be >= 1");
}

BackupMode TrainConfig::backup_mode() const {
  switch (algo) {
    case Algo::POAD: return BackupMode::bad(gamma_a);
    case Algo::NTPO: return BackupMode::naive(gamma_w.value_or(1.0), gamma_a);
    case Algo::ActionPPO: return BackupMode::action_level(gamma_a);
  }
  return BackupMode::bad(gamma_a);
}

// ---------------------------------------------------------------------------

TokenValueFn aligned_values(const Critic& critic, bool use_target) {
  return [&critic, use_target](const Observation& obs, TokenSpan prefix) {
    const auto ctx_prefix = prefix.empty() ? prefix : prefix.first(prefix.size() - 1);
    return critic.value(obs, ctx_prefix, use_target);
  };
}

std::vector<double> advantage_normalize(std::span<const double> advantages) {
  const double n = static_cast<double>(advantages.size());
  if (advantages.size() < 2) throw std::invalid_argument("advantage_normalize needs >= 2 entries");
  const double mean = std::accumulate(advantages.begin(), advantages.end(), 0.0) / n;
  double var = 0.0;
  for (double a : advantages) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out(advantages.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (advantages[i] - mean) / (sd + 1e-8);
  return out;
}

namespace {

// Token distributions at every prefix of the legal actions of one step.
struct TwosomeEval {
  std::vector<std::vector<TokenId>> prefixes;
  std::vector<std::vector<double>> probs;            // per prefix node
  std::vector<std::vector<std::size_t>> node_of;     // per action, per token
  std::vector<double> dist;                          // over legal actions
  std::size_t chosen = 0;
};

TwosomeEval evaluate_twosome(const StepData& s, const Actor& actor) {
  TwosomeEval ev;
  std::map<std::vector<TokenId>, std::size_t> index;
  std::vector<std::vector<double>> logps;
  std::vector<double> scores;
  bool found = false;
  for (std::size_t b = 0; b < s.legal.size(); ++b) {
    const auto& a = s.legal[b];
    if (a == s.action) {
      ev.chosen = b;
      found = true;
    }
    double total = 0.0;
    std::vector<std::size_t> nodes;
    for (std::size_t j = 0; j < a.size(); ++j) {
      std::vector<TokenId> prefix(a.tokens.begin(), a.tokens.begin() + static_cast<std::ptrdiff_t>(j));
      auto [it, fresh] = index.emplace(prefix, ev.prefixes.size());
      if (fresh) {
        auto lp = log_softmax(actor.logits(s.obs, prefix));
        std::vector<double> p(lp.size());
        for (std::size_t v = 0; v < lp.size(); ++v) p[v] = std::exp(lp[v]);
        ev.prefixes.push_back(std::move(prefix));
        ev.probs.push_back(std::move(p));
        logps.push_back(std::move(lp));
      }
      nodes.push_back(it->second);
      total += logps[it->second][a.tokens[j]];
    }
    ev.node_of.push_back(std::move(nodes));
    scores.push_back(total / static_cast<double>(a.size()));
  }
  if (!found) throw IllegalActionError("ActionPPO step action is not among its legal actions");
  ev.dist = softmax(scores);
  return ev;
}

Context token_context(const Actor& actor, const StepData& s, std::size_t j) {
  return actor.context(s.obs, s.action.prefix(j));
}

}  // namespace

std::vector<double> unit_logprobs(const StepData& s, const Actor& actor) {
  if (s.action_level) {
    const auto ev = evaluate_twosome(s, actor);
    return {std::log(ev.dist[ev.chosen])};
  }
  std::vector<double> out;
  for (std::size_t j = 0; j < s.action.size(); ++j) {
    const auto* mask = s.masks.empty() ? nullptr : &s.masks[j];
    const auto lp = log_softmax(actor.logits(s.obs, s.action.prefix(j), mask));
    out.push_back(lp[s.action.tokens[j]]);
  }
  return out;
}

PolicyLossOutput policy_loss(const std::vector<StepData>& steps, std::span<const std::size_t> idx,
                             const Actor& actor, double clip, double entropy_coef,
                             std::span<double> grad) {
  PolicyLossOutput out;
  if (idx.empty()) return out;
  const double T = static_cast<double>(idx.size());
  std::size_t n_units = 0;
  for (auto t : idx) n_units += steps[t].units();
  const double per_unit = 1.0 / static_cast<double>(n_units);
  const bool want_grad = !grad.empty();
  const std::size_t V = actor.vocab_size();
  std::size_t clipped = 0;

  auto surrogate_grad = [&](double r, double A, double c) {
    out.surrogate += c * std::min(r * A, std::clamp(r, 1.0 - clip, 1.0 + clip) * A);
    if (std::abs(r - 1.0) > clip) ++clipped;
    const bool flat = (A >= 0.0 && r > 1.0 + clip) || (A < 0.0 && r < 1.0 - clip);
    return flat ? 0.0 : -c * r * A;  // d loss / d log-prob
  };

  for (auto t : idx) {
    const auto& s = steps[t];
    if (!s.action_level) {
      const double c = 1.0 / (T * static_cast<double>(s.action.size()));
      for (std::size_t j = 0; j < s.action.size(); ++j) {
        const auto* mask = s.masks.empty() ? nullptr : &s.masks[j];
        const auto lp = log_softmax(actor.logits(s.obs, s.action.prefix(j), mask));
        std::vector<double> p(V);
        for (std::size_t v = 0; v < V; ++v) p[v] = std::exp(lp[v]);
        const TokenId w = s.action.tokens[j];
        const double r = std::exp(lp[w] - s.old_logprobs[j]);
        const double H = entropy(p);
        out.entropy += per_unit * H;
        const double dlp = surrogate_grad(r, s.advantages[j], c);
        if (!want_grad) continue;
        std::vector<double> dz(V, 0.0);
        for (std::size_t v = 0; v < V; ++v) {
          if (p[v] <= 0.0) continue;
          dz[v] = dlp * ((v == w ? 1.0 : 0.0) - p[v]);
          dz[v] += entropy_coef * per_unit * p[v] * (lp[v] + H);
        }
        actor.net().backward(token_context(actor, s, j), dz, grad);
      }
    } else {
      const auto ev = evaluate_twosome(s, actor);
      const double c = 1.0 / T;
      const double r = std::exp(std::log(ev.dist[ev.chosen]) - s.old_logprobs[0]);
      const double H = entropy(ev.dist);
      out.entropy += per_unit * H;
      const double dlp = surrogate_grad(r, s.advantages[0], c);
      if (!want_grad) continue;
      // d loss / d score_b, then through score_b = (1/L_b) sum_j log pi(w_b^j | prefix).
      std::vector<std::vector<double>> dz(ev.prefixes.size(), std::vector<double>(V, 0.0));
      for (std::size_t b = 0; b < s.legal.size(); ++b) {
        const double P = ev.dist[b];
        double ds = dlp * ((b == ev.chosen ? 1.0 : 0.0) - P);
        if (P > 0.0) ds += entropy_coef * per_unit * P * (std::log(P) + H);
        if (ds == 0.0) continue;
        const auto& a = s.legal[b];
        const double scale = ds / static_cast<double>(a.size());
        for (std::size_t j = 0; j < a.size(); ++j) {
          const auto node = ev.node_of[b][j];
          const auto& p = ev.probs[node];
          auto& g = dz[node];
          for (std::size_t v = 0; v < V; ++v) {
            if (p[v] > 0.0) g[v] -= scale * p[v];
          }
          g[a.tokens[j]] += scale;
        }
      }
      for (std::size_t i = 0; i < ev.prefixes.size(); ++i) {
        actor.net().backward(actor.context(s.obs, ev.prefixes[i]), dz[i], grad);
      }
    }
  }
  out.clip_frac = static_cast<double>(clipped) * per_unit;
  out.loss = -out.surrogate - entropy_coef * out.entropy;
  return out;
}

double critic_loss(const std::vector<StepData>& steps, std::span<const std::size_t> idx,
                   const Critic& critic, std::span<double> grad) {
  if (idx.empty()) return 0.0;
  const double T = static_cast<double>(idx.size());
  double loss = 0.0;
  for (auto t : idx) {
    const auto& s = steps[t];
    const std::size_t n = s.units();
    const double c = 1.0 / (T * static_cast<double>(n));
    for (std::size_t u = 0; u < n; ++u) {
      const auto ctx = critic.context(s.obs, s.action.prefix(s.action_level ? 0 : u));
      const double diff = s.value_targets[u] - critic.value(ctx);
      loss += c * diff * diff;
      if (!grad.empty()) {
        const double dv = -2.0 * c * diff;
        critic.net().backward(ctx, std::span<const double>(&dv, 1), grad);
      }
    }
  }
  return loss;
}

double approx_kl(const std::vector<StepData>& steps, std::span<const std::size_t> idx,
                 const Actor& actor) {
  double total = 0.0;
  std::size_t n = 0;
  for (auto t : idx) {
    const auto lp = unit_logprobs(steps[t], actor);
    for (std::size_t u = 0; u < lp.size(); ++u) {
      const double log_r = lp[u] - steps[t].old_logprobs[u];
      total += std::expm1(log_r) - log_r;
      ++n;
    }
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

// ---------------------------------------------------------------------------

namespace {

struct Worker {
  std::unique_ptr<Environment> env;
  std::size_t steps_done = 0;
  double running_return = 0.0;
  double running_discounted = 0.0;
  double discount = 1.0;
  std::vector<Trajectory> segments;
};

std::string dump_minibatch(const std::vector<StepData>& steps, std::span<const std::size_t> idx) {
  std::string out;
  for (auto t : idx) {
    const auto& s = steps[t];
    out += fmt::format("\n  step {}: obs {} action [{}] reward {} old_logprobs [{}] advantages [{}] targets [{}]",
                       t, s.obs.id, fmt::join(s.action.tokens, " "), s.reward,
                       fmt::join(s.old_logprobs, " "), fmt::join(s.advantages, " "),
                       fmt::join(s.value_targets, " "));
  }
  return out;
}

double finite_or_nan(double sum, std::size_t n) {
  return n ? sum / static_cast<double>(n) : std::nan("");
}

}  // namespace

RunArtifacts train(const TrainConfig& config, const EnvFactory& env_factory,
                   const TrainHooks& hooks) {
  config.validate();
  const BackupMode mode = config.backup_mode();
  const bool action_level = config.algo == Algo::ActionPPO;

  std::vector<Worker> workers(config.rollout_threads);
  for (auto& w : workers) w.env = env_factory();
  const auto space = std::make_shared<const ContextSpace>(*workers.front().env);
  const CounterRng root_rng(config.seed);

  RunArtifacts art;
  art.actor = std::make_shared<Actor>(space, config.backend, config.hidden,
                                      root_rng.split("actor-init").key());
  art.critic = std::make_shared<Critic>(space, config.backend, config.hidden,
                                        root_rng.split("critic-init").key());
  Actor& actor = *art.actor;
  Critic& critic = *art.critic;
  Adam actor_opt(actor.net().num_params(), {config.actor_lr, 0.9, 0.999, 1e-8, config.max_grad_norm});
  Adam critic_opt(critic.net().num_params(), {config.critic_lr, 0.9, 0.999, 1e-8, config.max_grad_norm});

  const std::size_t updates = config.total_env_steps / config.batch_size;
  std::size_t env_steps = 0;
  for (std::size_t u = 0; u < updates; ++u) {
    // Collect: worker w gathers its share of batch_size steps.
    std::vector<std::exception_ptr> errors(workers.size());
    auto collect = [&](std::size_t wi) {
      try {
        auto& w = workers[wi];
        w.segments.clear();
        std::size_t quota = config.batch_size / workers.size() + (wi < config.batch_size % workers.size());
        while (quota > 0) {
          RolloutOptions opt;
          opt.max_steps = quota;
          opt.seed = config.seed;
          opt.worker = wi;
          opt.step_offset = w.steps_done;
          opt.reset = w.steps_done == 0;
          opt.use_mask = config.use_mask;
          opt.sampling = action_level ? Sampling::Twosome : Sampling::Token;
          opt.gamma_a = config.gamma_a;
          auto traj = collect_rollout(*w.env, actor, opt);
          quota -= traj.size();
          w.steps_done += traj.size();
          w.segments.push_back(std::move(traj));
        }
      } catch (...) {
        errors[wi] = std::current_exception();
      }
    };
    if (workers.size() == 1) {
      collect(0);
    } else {
      std::vector<std::thread> threads;
      for (std::size_t wi = 0; wi < workers.size(); ++wi) threads.emplace_back(collect, wi);
      for (auto& th : threads) th.join();
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    env_steps += config.batch_size;

    // Prepare step data, episode statistics and advantages.
    std::vector<StepData> steps;
    std::vector<std::pair<const Trajectory*, std::size_t>> segments;  // segment, first step
    std::vector<double> returns, discounted;
    for (auto& w : workers) {
      for (const auto& seg : w.segments) {
        segments.emplace_back(&seg, steps.size());
        for (const auto& rec : seg.steps()) {
          StepData s;
          s.obs = rec.obs;
          s.action = rec.action;
          s.reward = rec.reward;
          s.next_obs = rec.next_obs;
          s.done = rec.done;
          s.action_level = action_level;
          if (action_level) {
            s.legal = w.env->legal_actions(rec.obs);
          } else if (config.use_mask) {
            const LegalSet legal(w.env->legal_actions(rec.obs));
            for (std::size_t j = 0; j < rec.action.size(); ++j) {
              s.masks.push_back(legal.next_token_mask(rec.action.prefix(j), space->vocab_size()));
            }
          }
          s.old_logprobs = unit_logprobs(s, actor);
          steps.push_back(std::move(s));

          w.running_return += rec.reward;
          w.running_discounted += w.discount * rec.reward;
          w.discount *= config.gamma_a;
          if (rec.done) {
            returns.push_back(w.running_return);
            discounted.push_back(w.running_discounted);
            art.episodes.push_back({env_steps, w.running_return, w.running_discounted});
            w.running_return = w.running_discounted = 0.0;
            w.discount = 1.0;
          }
        }
      }
    }

    const auto live_values = aligned_values(critic, false);
    for (const auto& [seg, first] : segments) {
      std::vector<double> adv;
      if (action_level) {
        std::vector<double> v_obs, v_next;
        for (const auto& rec : seg->steps()) {
          v_obs.push_back(critic.value(rec.obs, TokenSpan()));
          v_next.push_back(rec.done ? 0.0 : critic.value(rec.next_obs, TokenSpan()));
        }
        adv = gae_action_advantages(*seg, v_obs, v_next, config.gamma_a,
                                    config.use_gae ? config.lambda : 0.0);
      } else {
        const auto valued = refresh_token_values(*seg, live_values);
        adv = config.use_gae ? gae_token_advantages(valued, mode, config.lambda)
                             : token_residuals(valued, mode);
      }
      std::size_t i = 0;
      for (std::size_t t = 0; t < seg->size(); ++t) {
        auto& s = steps[first + t];
        s.advantages.assign(adv.begin() + static_cast<std::ptrdiff_t>(i),
                            adv.begin() + static_cast<std::ptrdiff_t>(i + s.units()));
        i += s.units();
      }
    }
    if (config.normalize_advantages) {
      std::vector<double> flat;
      for (const auto& s : steps) flat.insert(flat.end(), s.advantages.begin(), s.advantages.end());
      if (flat.size() >= 2) {
        const auto norm = advantage_normalize(flat);
        std::size_t i = 0;
        for (auto& s : steps) {
          for (auto& a : s.advantages) a = norm[i++];
        }
      }
    }

    // Update phase.
    UpdateMetrics m;
    m.env_steps = env_steps;
    m.update = u;
    m.seed = config.seed;
    m.episodes = returns.size();
    std::size_t n_mb = 0;
    bool stop = false;
    std::vector<double> actor_grad(actor.net().num_params());
    std::vector<double> critic_grad(critic.net().num_params());
    std::vector<std::size_t> order(steps.size());
    for (std::size_t e = 0; e < config.ppo_epochs && !stop; ++e) {
      // Critic targets from the frozen copy.
      const auto target_values = aligned_values(critic, true);
      for (const auto& [seg, first] : segments) {
        std::vector<double> targets;
        if (action_level) {
          targets = action_targets(
              *seg, [&](const Observation& o) { return critic.value(o, TokenSpan(), true); },
              config.gamma_a);
        } else {
          const auto valued = refresh_token_values(*seg, target_values);
          targets = config.algo == Algo::NTPO
                        ? naive_token_targets(valued, *config.gamma_w, config.gamma_a).value_target
                        : bad_targets(valued, config.gamma_a).value_target;
        }
        std::size_t i = 0;
        for (std::size_t t = 0; t < seg->size(); ++t) {
          auto& s = steps[first + t];
          s.value_targets.assign(targets.begin() + static_cast<std::ptrdiff_t>(i),
                                 targets.begin() + static_cast<std::ptrdiff_t>(i + s.units()));
          i += s.units();
        }
      }

      std::iota(order.begin(), order.end(), std::size_t{0});
      CounterRng shuffle = root_rng.split("minibatch").split(u).split(e);
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[shuffle.next_below(i)]);
      }
      const std::size_t mb_size = order.size() / config.num_mini_batch;
      for (std::size_t b = 0; b < config.num_mini_batch; ++b) {
        const std::span<const std::size_t> idx(order.data() + b * mb_size,
                                               b + 1 == config.num_mini_batch ? order.size() - b * mb_size : mb_size);
        std::fill(actor_grad.begin(), actor_grad.end(), 0.0);
        const auto pl = policy_loss(steps, idx, actor, config.clip, config.entropy_coef, actor_grad);
        if (!std::isfinite(pl.loss)) {
          throw NumericalError(fmt::format("non-finite policy loss in update {} epoch {} minibatch {}:{}",
                                           u, e, b, dump_minibatch(steps, idx)));
        }
        actor_opt.step(actor.net().params(), actor_grad);

        std::fill(critic_grad.begin(), critic_grad.end(), 0.0);
        const double vl = critic_loss(steps, idx, critic, critic_grad);
        if (!std::isfinite(vl)) {
          throw NumericalError(fmt::format("non-finite value loss in update {} epoch {} minibatch {}:{}",
                                           u, e, b, dump_minibatch(steps, idx)));
        }
        for (auto& g : critic_grad) g *= config.value_coef;
        critic_opt.step(critic.net().params(), critic_grad);

        const double kl = approx_kl(steps, idx, actor);
        m.policy_loss += pl.loss;
        m.value_loss += vl;
        m.entropy += pl.entropy;
        m.clip_frac += pl.clip_frac;
        m.approx_kl += kl;
        ++n_mb;
        ++m.actor_steps;
        if (kl >= config.kl_threshold) {
          stop = true;
          break;
        }
      }
      critic.sync_target();
    }
    m.policy_loss /= static_cast<double>(n_mb);
    m.value_loss /= static_cast<double>(n_mb);
    m.entropy /= static_cast<double>(n_mb);
    m.clip_frac /= static_cast<double>(n_mb);
    m.approx_kl /= static_cast<double>(n_mb);

    m.mean_return = finite_or_nan(std::accumulate(returns.begin(), returns.end(), 0.0), returns.size());
    m.mean_discounted_return =
        finite_or_nan(std::accumulate(discounted.begin(), discounted.end(), 0.0), discounted.size());
    double var = 0.0;
    for (double r : returns) var += (r - m.mean_return) * (r - m.mean_return);
    m.std_return = returns.empty() ? std::nan("") : std::sqrt(var / static_cast<double>(returns.size()));
    art.metrics.push_back(m);
    if (hooks.on_update) hooks.on_update(m, actor, critic);

    if (config.checkpoint_every && !config.checkpoint_dir.empty() &&
        (u + 1) % config.checkpoint_every == 0) {
      std::filesystem::create_directories(config.checkpoint_dir);
      const auto base = std::filesystem::path(config.checkpoint_dir);
      std::ofstream a(base / fmt::format("actor_{:06}.ckpt", u + 1), std::ios::binary);
      write_checkpoint(a, actor.net(), CheckpointRole::Actor, space->vocab_hash());
      std::ofstream c(base / fmt::format("critic_{:06}.ckpt", u + 1), std::ios::binary);
      write_checkpoint(c, critic.net(), CheckpointRole::Critic, space->vocab_hash());
    }
  }
  return art;
}

void write_metrics_header(std::ostream& out) {
  out << "env_steps,update,mean_return,std_return,policy_loss,value_loss,entropy,approx_kl,clip_frac,seed\n";
}

void write_metrics_row(std::ostream& out, const UpdateMetrics& m) {
  out << fmt::format("{},{},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g},{}\n", m.env_steps,
                     m.update, m.mean_return, m.std_return, m.policy_loss, m.value_loss, m.entropy,
                     m.approx_kl, m.clip_frac, m.seed);
}

}  // namespace tokrl

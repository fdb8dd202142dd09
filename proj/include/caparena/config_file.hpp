#ifndef CAPARENA_CONFIG_FILE_HPP
#define CAPARENA_CONFIG_FILE_HPP

#include <string>

#include "caparena/arena.hpp"

namespace caparena::arena {

// INI-style experiment configuration:
//
//   [data]      count, test_fraction, height, width, channels,
//               rotation, jitter, noise
//   [model]     preset
//   [train]     epochs, retrain_epochs, batch_size, lr
//   [attack]    fgsm_epsilon, one_pixel_budget, one_pixel_population,
//               one_pixel_generations, one_pixel_limit
//   [protocol]  max_rounds, attack_threshold, defense_threshold,
//               retrain_only_on_success, holdout_eval, seed
//
// '#' and ';' start comments. Unknown sections or keys are errors; omitted
// keys keep their defaults.
ProtocolConfig load_protocol_config(const std::string& path);
ProtocolConfig parse_protocol_config(const std::string& text, const std::string& origin = "<string>");

// Canonical form: every key in section order, one blank line between
// sections. parse(save(c)) == c.
std::string protocol_config_text(const ProtocolConfig& cfg);
void save_protocol_config(const ProtocolConfig& cfg, const std::string& path);

}  // namespace caparena::arena

#endif

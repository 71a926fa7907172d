#pragma once

#include "common.hpp"

namespace cartolab::cli {

// Each command reads its inputs, writes provenance-stamped outputs into
// ctx.out_dir and bumps ctx.skipped for records it had to drop. Fatal
// problems raise Error; the driver maps that to exit 1 and skips to exit 2.

void cmd_ingest(CmdContext& ctx);
void cmd_mapels(CmdContext& ctx);
void cmd_cluster(CmdContext& ctx);
void cmd_rupture(CmdContext& ctx);
void cmd_complexes(CmdContext& ctx);
void cmd_univocity(CmdContext& ctx);
void cmd_composition(CmdContext& ctx);
void cmd_network(CmdContext& ctx);
void cmd_diffusion(CmdContext& ctx);
void cmd_chrono(CmdContext& ctx);
void cmd_mosaic(CmdContext& ctx);
void cmd_report(CmdContext& ctx);

}  // namespace cartolab::cli

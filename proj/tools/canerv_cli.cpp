#include <cstdio>
#include <exception>

#include <CLI11.hpp>

#include "canerv/cli.hpp"

namespace {

using namespace canerv;
using namespace canerv::cli;

void add_source(CLI::App* app, SourceOptions& s, const std::string& prefix, bool allow_synthetic) {
  app->add_option("--" + prefix, s.path, "PNG directory or raw RGB24 file");
  app->add_option("--" + std::string(prefix == "input" ? "" : prefix + "-") + "layout", s.layout,
                  "png_dir or raw_rgb24")
      ->check(CLI::IsMember({"png_dir", "raw_rgb24"}));
  if (prefix == "input") {
    app->add_option("--width", s.width, "raw width");
    app->add_option("--height", s.height, "raw height");
    app->add_option("--frames", s.frames, "frame count (raw; also synthetic length)");
  }
  if (allow_synthetic) {
    app->add_option("--synthetic", s.synthetic, "generate the input instead of reading it")
        ->check(CLI::IsMember({"static_texture", "moving_square", "brightness_drift", "scene_cut", "text_overlay"}));
    app->add_option("--synth-seed", s.synth_seed, "seed for --synthetic");
  }
}

void add_encode_options(CLI::App* app, EncodeFlags& f) {
  add_source(app, f.source, "input", true);
  app->add_option("--config", f.config_file, "key=value file; overrides flags");
  app->add_option("--preset", f.preset, "quality preset")->check(CLI::IsMember({"q1", "q2", "q3", "q4"}));
  app->add_option("--lambda", f.lambda, "rate-distortion trade-off for the depth search");
  app->add_option("--epochs", f.epochs, "training epochs");
  app->add_option("--qat-epochs", f.qat_epochs, "quantization-aware fine-tuning epochs");
  app->add_option("--rank", f.rank, "number of DFA bases");
  app->add_option("--seed", f.seed, "initialization and shuffling seed");
  app->add_flag("--no-dsa", f.no_dsa, "keep every extra depth at 0");
  app->add_flag("--no-dfa", f.no_dfa, "disable frame adaptation");
  app->add_flag("--no-hsa", f.no_hsa, "disable the edge branch");
  app->add_flag("--dsa-single", f.dsa_single, "search one depth shared by all layers");
  app->add_flag("--deterministic", f.deterministic, "omit wall-clock timings from the manifest");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"canerv: neural video representation codec"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  EncodeFlags enc;
  auto* encode = app.add_subcommand("encode", "fit, quantize and write a bitstream");
  add_encode_options(encode, enc);
  encode->add_option("--output", enc.output, "bitstream path")->required();
  encode->add_option("--manifest", enc.manifest, "run manifest (default <output>.manifest.json)");
  encode->add_option("--loss-csv", enc.loss_csv, "per-epoch loss log");
  encode->add_flag("--emit-search-trace", enc.emit_search_trace, "record every depth evaluation in the manifest");

  DecodeFlags dec;
  auto* decode = app.add_subcommand("decode", "reconstruct frames from a bitstream");
  decode->add_option("--input", dec.input, "bitstream")->required();
  decode->add_option("--output", dec.output, "frame directory")->required();
  decode->add_option("--frame", dec.frame, "decode only this frame index");
  decode->add_option("--manifest", dec.manifest, "run manifest (default <output>.manifest.json)");
  decode->add_flag("--deterministic", dec.deterministic, "omit wall-clock timings from the manifest");

  EvalFlags ev;
  auto* eval = app.add_subcommand("eval", "per-frame PSNR / MS-SSIM between two sequences");
  add_source(eval, ev.original, "original", false);
  add_source(eval, ev.decoded, "decoded", false);
  eval->add_option("--width", ev.original.width, "raw width");
  eval->add_option("--height", ev.original.height, "raw height");
  eval->add_option("--bitstream", ev.stream, "bitstream whose size gives the bpp column");
  eval->add_option("--bits", ev.bits, "bit count for the bpp column");
  eval->add_option("--csv", ev.csv, "write the table here as well as to stdout");

  SynthFlags syn;
  std::string synth_kind = "static_texture";
  auto* synth = app.add_subcommand("synth", "write a synthetic test sequence");
  synth->add_option("--kind", synth_kind, "sequence type")
      ->check(CLI::IsMember({"static_texture", "moving_square", "brightness_drift", "scene_cut", "text_overlay"}));
  synth->add_option("--frames", syn.spec.frames, "frame count");
  synth->add_option("--height", syn.spec.height, "frame height");
  synth->add_option("--width", syn.spec.width, "frame width");
  synth->add_option("--seed", syn.spec.seed, "texture seed");
  synth->add_option("--magnitude", syn.spec.magnitude, "motion in px/frame or drift per frame");
  synth->add_option("--layout", syn.layout, "png_dir or raw_rgb24")->check(CLI::IsMember({"png_dir", "raw_rgb24"}));
  synth->add_option("--output", syn.output, "output directory or file")->required();
  synth->add_option("--manifest", syn.manifest, "run manifest (default <output>.manifest.json)");

  RdFlags rd;
  auto* rdc = app.add_subcommand("rd", "rate-distortion table and plot for a set of bitstreams");
  rdc->add_option("streams", rd.streams, "bitstreams")->required();
  add_source(rdc, rd.source, "source", true);
  rdc->add_option("--width", rd.source.width, "raw width");
  rdc->add_option("--height", rd.source.height, "raw height");
  rdc->add_option("--frames", rd.source.frames, "frame count");
  rdc->add_option("--csv", rd.csv, "RD table")->required();
  rdc->add_option("--plot", rd.plot, "PNG chart");
  rdc->add_option("--anchor", rd.anchor_csv, "anchor RD table for BD-rate");
  rdc->add_option("--quality", rd.quality, "psnr or msssim")->check(CLI::IsMember({"psnr", "msssim"}));

  AblateFlags ab;
  auto* ablate = app.add_subcommand("ablate", "train each component variant and tabulate the results");
  add_encode_options(ablate, ab.base);
  ablate->add_option("--variants", ab.variants, "subset of baseline,dsa,dfa,hsa,full")->delimiter(',');
  ablate->add_option("--seeds", ab.seeds, "seeds per variant");
  ablate->add_option("--csv", ab.csv, "results table")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? exit_ok : exit_usage;
  }

  try {
    if (*encode) {
      run_encode(enc);
    } else if (*decode) {
      run_decode(dec);
    } else if (*eval) {
      ev.decoded.width = ev.original.width;
      ev.decoded.height = ev.original.height;
      run_eval(ev);
    } else if (*synth) {
      syn.spec.kind = parse_synthetic_kind(synth_kind);
      run_synth(syn);
    } else if (*rdc) {
      run_rd(rd);
    } else if (*ablate) {
      run_ablate(ab);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e);
  }
  return exit_ok;
}

"""omckit command-line driver: simulate | fit | phonon | plotdata.

Exit codes: 0 on success (non-converged fits included), 2 on invalid input,
3 when files cannot be read or written.
"""
import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from database.report_store import ReportStore, StoreError, TableParseError
from models.config_models import FitOptions, RunConfig
from services.analysis_service import AnalysisService
from services.plotdata_service import MissingSeriesError, PlotDataService
from services.simulation_service import SimulationService
from utils.enums import Figure, FitMode

logger = logging.getLogger("omckit")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
OUT_DIR_ENV = "OMCKIT_OUT_DIR"


def _parse_formats(s: str) -> List[str]:
    formats = [x.strip() for x in s.split(",") if x.strip()]
    unknown = set(formats) - {"csv", "svg"}
    if unknown or not formats:
        raise argparse.ArgumentTypeError(f"formats must be csv and/or svg, got {s!r}")
    return formats


def _add_common_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="RunConfig JSON; defaults apply when omitted.")
    p.add_argument("--out", type=Path, default=None,
                   help=f"Output directory (overrides ${OUT_DIR_ENV} and the config).")
    p.add_argument("--seed", type=int, default=None, help="Root seed (unsigned 64-bit).")
    p.add_argument("--workers", type=int, default=None, help="Concurrent sweep points or input files.")
    p.add_argument("--format", dest="formats", type=_parse_formats, default=None,
                   help="Comma list of csv,svg.")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="omckit", description="Cavity-optomechanics thermometry toolkit")
    sub = p.add_subparsers(dest="cmd", required=True)

    ps = sub.add_parser("simulate", help="Synthesize spectra and derived series over a sweep.")
    _add_common_args(ps)

    pp = sub.add_parser("phonon", help="Tabulate the continuum phonon bath against its asymptotes.")
    _add_common_args(pp)

    pf = sub.add_parser("fit", help="Fit spectra or series tables.")
    _add_common_args(pf)
    pf.add_argument("--mode", type=FitMode, required=True, choices=list(FitMode),
                    help="lorentzian | voigt | detuning | power-law | bath-model | g0")
    pf.add_argument("--input", dest="inputs", action="append", required=True,
                    help="Spectrum CSV, directory of spectra, or series CSV; repeatable.")
    pf.add_argument("--cooperativity", type=float, default=None, help="Fixed C for detuning fits.")
    pf.add_argument("--no-jitter", action="store_true", help="Hold the Gaussian jitter width at zero.")
    pf.add_argument("--g0-method", default="linewidth", choices=["linewidth", "cooperativity", "both"])
    pf.add_argument("--bath-mode", default="spline", choices=["spline", "per_point"])
    pf.add_argument("--n-starts", type=int, default=1, help="Multi-start count for bath-model fits.")
    pf.add_argument("--x-column", default="x")
    pf.add_argument("--y-column", default="y")
    pf.add_argument("--error-column", default=None)

    pd_ = sub.add_parser("plotdata", help="Export the curves of one figure from a report.")
    _add_common_args(pd_)
    pd_.add_argument("--figure", type=Figure, required=True, choices=list(Figure))
    pd_.add_argument("--bundle", type=Path, default=None,
                     help="Directory holding report.json; the output directory when omitted.")
    return p


def load_config(args: argparse.Namespace) -> RunConfig:
    if args.config is None:
        config = RunConfig()
    else:
        with open(args.config, "r", encoding="utf-8") as handle:
            config = RunConfig.model_validate_json(handle.read())
    updates = {}
    if args.seed is not None:
        updates["noise"] = {"seed": args.seed}
    if args.workers is not None:
        updates["workers"] = args.workers
    if args.formats is not None:
        updates["outputs"] = {"formats": args.formats}
    return config.with_overrides(**updates) if updates else config


def output_dir(args: argparse.Namespace, config: RunConfig) -> Path:
    if args.out is not None:
        return args.out
    return Path(os.getenv(OUT_DIR_ENV) or config.outputs.directory)


def run(args: argparse.Namespace) -> int:
    config = load_config(args)
    store = ReportStore(output_dir(args, config))

    if args.cmd == "simulate":
        store.ensure_writable()
        bundle = SimulationService(store).cmd_simulate(config)
    elif args.cmd == "phonon":
        bundle = SimulationService(store).cmd_phonon(config)
    elif args.cmd == "fit":
        options = FitOptions.from_run_config(
            config, args.mode, args.inputs,
            cooperativity=args.cooperativity,
            include_jitter=not args.no_jitter,
            g0_method=args.g0_method,
            bath_mode=args.bath_mode,
            n_starts=args.n_starts,
            x_column=args.x_column,
            y_column=args.y_column,
            error_column=args.error_column,
        )
        bundle = AnalysisService(store).cmd_fit(options)
    else:
        source = ReportStore(args.bundle) if args.bundle is not None else store
        written = PlotDataService(store).cmd_plotdata(source.load_bundle(), args.figure, config.outputs.formats)
        for path in written:
            print(path)
        return EXIT_OK

    path = store.write_report(bundle)
    for failure in bundle.failures:
        logger.warning(f"Failed item: {failure}")
    not_converged = [name for name, fit in bundle.fits.items() if not fit.converged]
    if not_converged:
        logger.warning(f"Fits not converged: {', '.join(not_converged)}")
    print(path)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except TableParseError as e:
        logger.error(f"Parse error: {str(e)}")
        return EXIT_VALIDATION
    except (StoreError, OSError) as e:
        logger.error(f"I/O error: {str(e)}")
        return EXIT_IO
    except MissingSeriesError as e:
        logger.error(str(e))
        return EXIT_VALIDATION
    except ValueError as e:
        # pydantic ValidationError and every domain error derive from ValueError
        logger.error(f"Invalid input: {str(e)}")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

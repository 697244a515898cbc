# Tests for hybrid_phy.main

import argparse
import io
import json
import shutil
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

from hybrid_phy import main as phy_main
from hybrid_phy.errors import SplitPlanError
from hybrid_phy.iqfile import read_iq


class TestArgumentParsing(unittest.TestCase):

    def test_parse_segment(self):
        self.assertEqual(phy_main.parse_segment("6..7"), (5, 6))
        self.assertEqual(phy_main.parse_segment("9"), (8, 8))
        for bad in ("0..2", "7..6", "x", "1..10"):
            with self.assertRaises(argparse.ArgumentTypeError):
                phy_main.parse_segment(bad)

    def test_parse_lists(self):
        self.assertEqual(phy_main.parse_buffers("16,64"), [16, 64])
        self.assertEqual(phy_main.parse_presets("1,6"), [1, 6])
        with self.assertRaises(argparse.ArgumentTypeError):
            phy_main.parse_buffers("16,0")
        with self.assertRaises(argparse.ArgumentTypeError):
            phy_main.parse_presets("7")

    def test_bad_segment_is_usage_error(self):
        with patch("sys.stderr", new_callable=io.StringIO):
            self.assertEqual(phy_main.main(["simulate", "--sw", "3..x"]), phy_main.EXIT_USAGE_ERROR)

    def test_unknown_flag_is_usage_error(self):
        with patch("sys.stderr", new_callable=io.StringIO):
            self.assertEqual(phy_main.main(["sweep", "--bogus"]), phy_main.EXIT_USAGE_ERROR)

    def test_no_command_prints_help(self):
        with patch("sys.stderr", new_callable=io.StringIO) as err:
            self.assertEqual(phy_main.main([]), phy_main.EXIT_USAGE_ERROR)
        self.assertIn("usage", err.getvalue())

    def test_packet_sources(self):
        parser = phy_main.build_parser()
        args = parser.parse_args(["modulate", "--packet-hex", "a7ff"])
        self.assertEqual(phy_main.read_packet(args), b"\xa7\xff")
        args = parser.parse_args(["modulate", "--packet-bytes", "5", "--seed", "3"])
        self.assertEqual(len(phy_main.read_packet(args)), 5)


class TestCommands(unittest.TestCase):

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)

    def test_modulate_writes_iq_and_manifest(self):
        code = phy_main.main(["modulate", "--preset", "1", "--packet-hex", "a7", "-o", str(self.tmp)])
        self.assertEqual(code, phy_main.EXIT_OK)
        header, stream = read_iq(self.tmp / "preset1.iq")
        self.assertEqual(header.preset_id, 1)
        self.assertEqual(len(stream), 32 * 4 + 2)
        manifest = json.loads((self.tmp / "manifest.json").read_text())
        self.assertEqual(manifest["command"], "modulate")

    def test_simulate_writes_report(self):
        argv = ["simulate", "--preset", "6", "--sw", "2..3", "--buffer", "64"]
        argv += ["--packet-hex", "0102", "-o", str(self.tmp)]
        self.assertEqual(phy_main.main(argv), phy_main.EXIT_OK)
        report = json.loads((self.tmp / "report.json").read_text())
        self.assertEqual(report["sw_first"], 1)
        for name in ("events.ndjson", "timeline.ndjson", "phase_breakdown.csv"):
            self.assertTrue((self.tmp / name).exists(), name)

    def test_simulate_disabled_stage_is_domain_error(self):
        # Stage 2 (PN9) is not used by OQPSK
        argv = ["simulate", "--preset", "1", "--sw", "2", "-o", str(self.tmp)]
        self.assertEqual(phy_main.main(argv), phy_main.EXIT_DOMAIN_ERROR)

    @patch("builtins.print")
    def test_fit_on_synthetic_points(self, mock_print):
        self.assertEqual(phy_main.main(["fit", "-o", str(self.tmp)]), phy_main.EXIT_OK)
        mock_print.assert_called_once_with("m=0.66 k=0.0007 r2=1")
        self.assertTrue((self.tmp / "fit.json").exists())

    @patch("hybrid_phy.main.PhyInteractor")
    def test_minbuf_cap_exceeded_is_not_an_error(self, mock_interactor_class):
        mock_interactor_class.return_value.min_buffer.return_value = {"cap_exceeded": True, "min_buffer": None}
        argv = ["minbuf", "--preset", "1", "--sw", "7", "--cap", "8", "-o", str(self.tmp)]
        with self.assertLogs(level="WARNING") as logs:
            code = phy_main.main(argv)
        self.assertEqual(code, phy_main.EXIT_OK)
        self.assertTrue(any("buffer up to 8" in line for line in logs.output))
        kwargs = mock_interactor_class.return_value.min_buffer.call_args.kwargs
        self.assertEqual(kwargs["sw"], (6, 6))
        self.assertEqual(kwargs["cap"], 8)

    def test_minbuf_cap_exceeded_writes_flagged_result(self):
        cost = self.tmp / "slow.json"
        cost.write_text(json.dumps({"irq_latency_cycles": 10**9}))
        out = self.tmp / "out"
        argv = ["minbuf", "--preset", "1", "--sw", "7", "--cap", "8", "--cost-model", str(cost), "-o", str(out)]
        with self.assertLogs(level="WARNING"):
            self.assertEqual(phy_main.main(argv), phy_main.EXIT_OK)
        result = json.loads((out / "min_buffer.json").read_text())
        self.assertTrue(result["cap_exceeded"])
        self.assertIsNone(result["min_buffer"])
        self.assertEqual(result["block"], "FIR")

    @patch("hybrid_phy.main.PhyInteractor")
    def test_minbuf_segment_without_preset_is_usage_error(self, mock_interactor_class):
        for extra in ([], ["--preset", "1", "--spaced"]):
            with patch("sys.stderr", new_callable=io.StringIO) as err:
                code = phy_main.main(["minbuf", "--sw", "7", "-o", str(self.tmp)] + extra)
            self.assertEqual(code, phy_main.EXIT_USAGE_ERROR)
            self.assertIn("--sw", err.getvalue())
        mock_interactor_class.return_value.min_buffer.assert_not_called()

    @patch("hybrid_phy.main.PhyInteractor")
    def test_domain_error_exit_code(self, mock_interactor_class):
        mock_interactor_class.return_value.sweep.side_effect = SplitPlanError("no such segment")
        code = phy_main.main(["sweep", "--presets", "1", "--buffers", "16", "-o", str(self.tmp)])
        self.assertEqual(code, phy_main.EXIT_DOMAIN_ERROR)
        mock_interactor_class.return_value.write_manifest.assert_called_once()

    def test_verify_missing_corpus(self):
        argv = ["verify", "--corpus", str(self.tmp / "absent"), "-o", str(self.tmp)]
        self.assertEqual(phy_main.main(argv), phy_main.EXIT_DOMAIN_ERROR)

    @patch("hybrid_phy.main.PhyInteractor")
    def test_verify_failures_exit_nonzero(self, mock_interactor_class):
        mock_interactor_class.return_value.verify.return_value = {"passed": 3, "failed": 1}
        self.assertEqual(phy_main.main(["verify", "-o", str(self.tmp)]), phy_main.EXIT_DOMAIN_ERROR)
        mock_interactor_class.return_value.verify.return_value = {"passed": 4, "failed": 0}
        self.assertEqual(phy_main.main(["verify", "-o", str(self.tmp)]), phy_main.EXIT_OK)

    def test_missing_packet_file_is_usage_error(self):
        argv = ["modulate", "--packet", str(self.tmp / "none.bin"), "-o", str(self.tmp)]
        self.assertEqual(phy_main.main(argv), phy_main.EXIT_USAGE_ERROR)


if __name__ == "__main__":
    unittest.main()

import json
import textwrap

import pytest

from chiselforge.corpus import LanguageTag, RawFile
from chiselforge.llmclient import ChatClient, ClientConfig, MockTransport

CHISEL_SNIPPET = textwrap.dedent(
    """\
    import chisel3._

    // simple register stage
    class PassThrough extends Module {
      val io = IO(new Bundle {
        val in = Input(UInt(8.W))
        val out = Output(UInt(8.W))
      })
      io.out := RegNext(io.in)
    }
    // padding line 1
    // padding line 2
    // padding line 3
    """
)

VERILOG_SNIPPET = textwrap.dedent(
    """\
    module adder(
      input [7:0] a,
      input [7:0] b,
      output [8:0] sum
    );
      assign sum = a + b;
      // padding line 1
      // padding line 2
      // padding line 3
      // padding line 4
    endmodule
    """
)


def make_raw(path="a.scala", content=CHISEL_SNIPPET, tag=LanguageTag.CHISEL):
    return RawFile.from_text(path, content, tag)


VALID_D2C_RESPONSE = (
    "<think>The Verilog is a simple adder; width can be extracted as a "
    "parameter and a pipelined structural variant considered.</think>\n\n"
    "```variants\n"
    "variant: Configurable - data width as a constructor parameter\n"
    "variant: Structural - optional pipelined output register\n"
    "```\n\n"
    "```scala\n"
    "class Adder(width: Int = 8, pipelined: Boolean = false) extends Module {\n"
    "  val io = IO(new Bundle {})\n"
    "}\n"
    "```\n"
)


class FixedAnnotator:
    """Annotator stub returning a fixed reply, recording prompts."""

    def __init__(self, reply):
        self.reply = reply
        self.prompts = []

    def annotate(self, prompt):
        self.prompts.append(prompt)
        return self.reply


class FailingAnnotator:
    def annotate(self, prompt):
        raise RuntimeError("annotator down")


@pytest.fixture
def fixed_annotator():
    return FixedAnnotator("4-bit counter")


def mock_client(rules, cache_dir=None, model="mock-teacher", **cfg_kw):
    config = ClientConfig(model_name=model, cache_dir=str(cache_dir) if cache_dir else None,
                          base_delay_s=0.0, jitter=False, **cfg_kw)
    return ChatClient(config, transport=MockTransport(rules))


def write_jsonl(path, records):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path

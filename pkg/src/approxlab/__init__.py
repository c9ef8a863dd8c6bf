"""approxlab: evolve approximate arithmetic circuits, curate Pareto-optimal
circuit libraries, and measure quantized-network resilience to approximate
multipliers."""

__version__ = "0.1.0"
CGP_FORMAT_VERSION = 1
MANIFEST_FORMAT_VERSION = 1
NETWORK_FORMAT_VERSION = 1

from .genome import (CgpParams, Circuit, FunctionSet, Genome, canonical_key,
                     decode, mutate, parse, serialize, validate)
from .simulator import (eval_exhaustive, eval_index, eval_sampled,
                        eval_vector)
from .metrics import ErrorReport, error_report, sampled_error_report
from .cost import CostReport, GateCostTable, cost_report
from .generators import (BamSpec, FunctionalModel, adder_model,
                         array_multiplier, bam_multiplier, multiplier_model,
                         ripple_carry_adder, truncated_multiplier)
from .evolve import (ParetoResult, SearchConfig, SearchTrace, SingleResult,
                     evolve_pareto, evolve_single)
from .library import (LibraryEntry, load_manifest, make_entry, pareto_filter,
                      save_manifest, select_even_spread,
                      union_dedup_selection)
from .qnn import (QuantizedNetwork, infer, infer_reference, load_dataset,
                  load_network, save_dataset, save_network)
from .resilience import (BlobSpec, MultiplierLut, build_lut, exact_lut,
                         full_replacement_eval, layerwise_sweep,
                         lut_from_entry, make_blobs, train_tiny_net)

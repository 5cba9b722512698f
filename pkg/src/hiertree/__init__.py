"""hiertree: zero-shot image classification via hierarchical comparative descriptions.

Build a knowledge tree by recursively clustering class embeddings and asking a
language-model gateway for group summaries and discriminative per-class
descriptions; classify by fusing per-level image/description similarities with
the plain label-embedding score. Ships with an HTTP service and a CLI client.
"""

__version__ = "0.1.0"

from .cluster import Clustering, KMeansConfig, choose_k, kmeans
from .embedding import RawVector, UnitVector, cosine, mean, normalize
from .evaluation import (
    ConfusionDiff,
    EvalResult,
    SweepSpec,
    confusion_diff,
    evaluate,
    sweep,
    sweep_evaluate,
)
from .fusion import (
    ClassDescriptionMatrix,
    ExplanationReport,
    FusionConfig,
    ScoreTrace,
    classify,
    explain,
    final_score,
    fused_running_average,
    level_scores,
)
from .gateway import (
    DescriptionGateway,
    DescriptionSet,
    PromptTemplate,
    parse_description_list,
    render_description_sets,
    replay_gateway,
)
from .providers import (
    HttpChatProvider,
    ProviderRequest,
    ProviderResponse,
    ReplayProvider,
    ScriptedProvider,
)
from .store import (
    ClusterSpec,
    DatasetManifest,
    GroupSpec,
    HttpEmbeddingProvider,
    ManifestItem,
    SyntheticEmbeddingProvider,
    load_embeddings,
    load_manifest,
    save_manifest,
    write_embeddings,
)
from .tree import (
    BuildConfig,
    KnowledgeTree,
    TreeBuilder,
    TreeNode,
    build_tree,
    description_matrices,
    embed_node_descriptions,
    load_tree,
    path_descriptions,
    save_tree,
    tree_from_json_obj,
    tree_to_json_obj,
)

__all__ = [name for name in dir() if not name.startswith("_")]

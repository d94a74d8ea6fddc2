from .kdtree import KDTree, knn, squared_distances
from .kmeans import KmeansResult, kmeans
from .ply import (
    PointCloud,
    encode_descriptor_sidecar,
    encode_ply,
    load_ply,
    read_cloud,
    read_descriptor_sidecar,
    write_cloud,
)
from .vocabulary import (
    VisualVocabulary,
    build_vocabulary,
    cluster_xyz,
    decode_vocabulary,
    encode_vocabulary,
    read_vocabulary,
    write_vocabulary,
)

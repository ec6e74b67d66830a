import numpy as np

from channelforest.boost import BoostedForest, Tree, TreeNode
from channelforest.channels import ChannelStack


def random_tree(rng, channels, cell_rows, cell_cols, depth, value_range=(0.0, 1.0)):
    """A random well-formed decision tree of exactly the given depth."""
    nodes = []

    def grow(d):
        idx = len(nodes)
        nodes.append(TreeNode())
        if d == depth or (d > 0 and rng.random() < 0.25):
            nodes[idx].leaf = float(rng.normal())
            return idx
        node = nodes[idx]
        node.channel = int(rng.integers(0, channels))
        node.cell_row = int(rng.integers(0, cell_rows))
        node.cell_col = int(rng.integers(0, cell_cols))
        node.threshold = float(rng.uniform(*value_range))
        node.left = grow(d + 1)
        node.right = grow(d + 1)
        return idx

    grow(0)
    return Tree(nodes=nodes)


def random_forest(rng, num_trees=8, channels=3, window=(32, 16), ratio=4,
                  depth=5, shrinkage=0.5, core=None):
    cell_rows = window[0] // ratio
    cell_cols = window[1] // ratio
    trees = [random_tree(rng, channels, cell_rows, cell_cols, depth)
             for _ in range(num_trees)]
    return BoostedForest(trees=trees, shrinkage=shrinkage, window=window,
                         ratio=ratio, channels=channels, cell_rows=cell_rows,
                         cell_cols=cell_cols, core=core)


def random_stack(rng, channels=3, height=20, width=12, ratio=4):
    values = rng.uniform(0.0, 1.0, size=(channels, height, width)).astype(np.float32)
    return ChannelStack(values, ratio=ratio, source="test")


def traverse_tree_oracle(tree, stack_values, oy, ox):
    """Independent scalar traversal used to cross-check forest scoring."""
    node = tree.nodes[0]
    while node.leaf is None:
        v = stack_values[node.channel][oy + node.cell_row][ox + node.cell_col]
        if v < node.threshold:
            node = tree.nodes[node.left]
        else:
            node = tree.nodes[node.right]
    return node.leaf

import chromaquery.cqmethods as cqmethods
import chromaquery.cqtrainer as cqtrainer


def new_record_callback(record):
    if record['iter'] % 50 == 0:
        for key, value in record.items():
            print(key + ' = ' + str(value))
    return


# desk-scale defaults train on procedurally drawn shapes, no download needed
cfg = cqmethods.load_cfg(overrides=['train.total_iters=200', 'train.output_dir=runs/example'])

# # train on a folder of images instead
# cfg = cqmethods.load_cfg(overrides=['data.root=/data/images', 'data.augment=True'])

# # full-size layer plan (slow on CPU)
# cfg = cqmethods.reference_cfg()

trainer = cqtrainer.Trainer(cfg, new_record_callback=new_record_callback, show_progress=True)
history = trainer.fit()
print('final loss ' + str(history[-1]['L_total']))

scores = trainer.evaluate_cf()
print('mean CF generated ' + str(scores['cf_gen']) + ', ground truth ' + str(scores['cf_gt']))
